#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace caqa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor of doubles. Rank 0 is a scalar (one value).
class Tensor {
public:
    Tensor() : values_(1, 0.0) {}
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}
    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != shape_size(shape_))
            throw std::invalid_argument("tensor: " + std::to_string(values_.size()) +
                                        " values for shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.values_[0] = v;
        return t;
    }
    static Tensor filled(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.values_) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }
    double& at(std::size_t t, std::size_t i, std::size_t j) {
        return values_[(t * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t t, std::size_t i, std::size_t j) const {
        return values_[(t * shape_[1] + i) * shape_[2] + j];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const {
        return shape_ == o.shape_ && values_ == o.values_;
    }

private:
    Shape shape_;                 // empty = rank-0 scalar
    std::vector<double> values_;  // row-major
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace caqa
