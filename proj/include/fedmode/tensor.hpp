#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedmode::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* ptr() noexcept { return data_.data(); }
    const double* ptr() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool all_finite() const;
    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Bitwise comparison; unlike operator== it distinguishes -0.0 from 0.0.
bool bit_equal(const Tensor& a, const Tensor& b);

struct NamedTensor {
    std::string name;
    Tensor value;

    bool operator==(const NamedTensor&) const = default;
};

/// A model's trainable state: an ordered list of uniquely named tensors.
class ParamSet {
public:
    void add(std::string name, Tensor value);

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const;
    bool empty() const noexcept { return entries_.empty(); }

    NamedTensor& operator[](std::size_t i) { return entries_[i]; }
    const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    /// Same names and shapes in the same order.
    bool same_layout(const ParamSet& other) const;
    bool operator==(const ParamSet&) const = default;

private:
    std::vector<NamedTensor> entries_;
};

bool bit_equal(const ParamSet& a, const ParamSet& b);

}  // namespace fedmode::nn
