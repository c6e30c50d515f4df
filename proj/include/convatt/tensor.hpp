#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace convatt {

struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline int numel(const Shape& shape) {
    int n = 1;
    for (int d : shape) {
        if (d <= 0) throw dimension_error("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor of doubles. The universal value carrier.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<size_t>(numel(shape)) != data.size())
            throw dimension_error("shape " + shape_str(shape) + " does not match data length");
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int size() const { return static_cast<int>(data.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : -1); }
    int cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : -1); }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void check_finite(const Tensor& t, const char* what) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by ") + what);
}

inline Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data) v = dist(rng);
    return t;
}

/// Entry (i,j) of the relative-offset lookup: clamp(j-i, -k, +k) + k, in [0, 2k].
inline int offset_index(int i, int j, int k) {
    int off = j - i;
    if (off < -k) off = -k;
    if (off > k) off = k;
    return off + k;
}

inline std::vector<std::vector<int>> relative_offset_index(int n, int k) {
    if (n < 1 || k < 0) throw dimension_error("relative_offset_index: need n >= 1, k >= 0");
    std::vector<std::vector<int>> idx(n, std::vector<int>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) idx[i][j] = offset_index(i, j, k);
    return idx;
}

}  // namespace convatt
