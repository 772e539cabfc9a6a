#include "fedmode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <utility>

#include "fedmode/error.hpp"

namespace fedmode::nn {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape_) + " does not hold " +
                                                  std::to_string(data_.size()) + " values");
    }
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

void ParamSet::add(std::string name, Tensor value) {
    for (const auto& e : entries_) {
        if (e.name == name) throw Error(ErrorCode::InvalidSpec, "duplicate parameter name '" + name + "'");
    }
    entries_.push_back({std::move(name), std::move(value)});
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.value;
    }
    throw Error(ErrorCode::LayoutMismatch, "no parameter named '" + name + "'");
}

Tensor& ParamSet::get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
        if (entries_[i].name != other.entries_[i].name || entries_[i].value.shape() != other.entries_[i].value.shape())
            return false;
    }
    return true;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!bit_equal(a[i].value, b[i].value)) return false;
    }
    return true;
}

}  // namespace fedmode::nn
