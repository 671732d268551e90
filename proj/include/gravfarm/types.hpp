#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace gravfarm {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double& operator[](int k) { return k == 0 ? x : (k == 1 ? y : z); }
    double operator[](int k) const { return k == 0 ? x : (k == 1 ? y : z); }

    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend Vec3 operator*(double s, Vec3 a) { return a *= s; }

    double norm2() const { return x * x + y * y + z * z; }
    double norm() const { return std::sqrt(norm2()); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

// Point mass with state advanced by the integrator. Ids are stable across a
// simulation; the brute-force oracle sums in ascending-id order.
struct Body {
    std::uint64_t id = 0;
    double mass = 0.0;
    Vec3 pos;
    Vec3 vel;
    Vec3 acc;
};

struct BoundingBox {
    Vec3 min;
    Vec3 max;

    Vec3 center() const { return {0.5 * (min.x + max.x), 0.5 * (min.y + max.y), 0.5 * (min.z + max.z)}; }

    // Cell side length: the largest extent over the three axes.
    double side() const {
        double s = max.x - min.x;
        s = std::fmax(s, max.y - min.y);
        s = std::fmax(s, max.z - min.z);
        return s;
    }

    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y &&
               p.z >= min.z && p.z <= max.z;
    }

    // Squared Euclidean distance from a point to the box (0 if inside).
    double dist2(const Vec3& p) const {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            double lo = min[k], hi = max[k], v = p[k];
            if (v < lo) d2 += (lo - v) * (lo - v);
            else if (v > hi) d2 += (v - hi) * (v - hi);
        }
        return d2;
    }
};

struct SimParams {
    double theta = 0.5;     // opening angle for the s/d acceptance test
    double eps = 0.025;     // Plummer softening length
    double g_const = 1.0;
    double dt = 0.01;
    int leaf_capacity = 1;
};

// One term of a body's force sum: either a cell's monopole or another body.
struct InteractionEntry {
    double mass = 0.0;
    Vec3 pos;
};

using InteractionList = std::vector<InteractionEntry>;

}  // namespace gravfarm
