#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wssam {

// Error taxonomy. The CLI maps these onto process exit codes
// (invalid input / config -> 2, I/O and format -> 3, numeric failure -> 4).
class invalid_input_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class format_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class numeric_failure_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Vec3 {
    T x{}, y{}, z{};

    Vec3() = default;
    Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

    T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    const T& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(T s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

    double norm() const {
        return std::sqrt(double(x) * x + double(y) * y + double(z) * z);
    }
    bool all_finite() const {
        return std::isfinite(double(x)) && std::isfinite(double(y)) && std::isfinite(double(z));
    }
};

using Vec3d = Vec3<double>;
using Vec3i = Vec3<int>;

inline Vec3d to_vec3d(const Vec3i& v) {
    return {double(v.x), double(v.y), double(v.z)};
}

enum class Frame { voxel, world };

// A located point; landmark coordinates live here in either frame.
struct Point {
    Vec3d coords{};
    Frame frame = Frame::voxel;
};

struct Landmark {
    int id = 0;
    Point point;
};

// Ordered list of identified points for one case. Ids must be unique.
struct LandmarkSet {
    std::string case_id;
    std::vector<Landmark> entries;

    void add(int id, Point p) {
        for (const auto& e : entries)
            if (e.id == id)
                throw invalid_input_error("duplicate landmark id " + std::to_string(id) +
                                          " in set '" + case_id + "'");
        entries.push_back({id, p});
    }

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    const Landmark* find(int id) const {
        for (const auto& e : entries)
            if (e.id == id) return &e;
        return nullptr;
    }

    void validate() const {
        if (entries.empty())
            throw invalid_input_error("landmark set '" + case_id + "' is empty");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (!entries[i].point.coords.all_finite())
                throw invalid_input_error("non-finite landmark coordinates, id " +
                                          std::to_string(entries[i].id));
            for (std::size_t j = i + 1; j < entries.size(); ++j)
                if (entries[i].id == entries[j].id)
                    throw invalid_input_error("duplicate landmark id " +
                                              std::to_string(entries[i].id));
        }
    }
};

}  // namespace wssam
