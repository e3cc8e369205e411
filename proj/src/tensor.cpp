#include "cdsynth/tensor.hpp"

#include <cmath>

namespace cdsynth {

namespace {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

} // namespace

Tensor Tensor::zeros(Dtype dtype, std::vector<std::int64_t> shape) {
    Tensor t;
    t.dtype = dtype;
    std::int64_t n = shape_numel(shape);
    t.shape = std::move(shape);
    if (dtype == Dtype::f32)
        t.data = std::vector<float>(static_cast<std::size_t>(n), 0.0f);
    else
        t.data = std::vector<double>(static_cast<std::size_t>(n), 0.0);
    t.validate("zeros");
    return t;
}

Tensor Tensor::from_f32(std::vector<std::int64_t> shape, std::vector<float> values) {
    Tensor t;
    t.dtype = Dtype::f32;
    t.shape = std::move(shape);
    t.data = std::move(values);
    t.validate("from_f32");
    return t;
}

Tensor Tensor::from_f64(std::vector<std::int64_t> shape, std::vector<double> values) {
    Tensor t;
    t.dtype = Dtype::f64;
    t.shape = std::move(shape);
    t.data = std::move(values);
    t.validate("from_f64");
    return t;
}

std::int64_t Tensor::numel() const { return shape_numel(shape); }

const std::vector<float>& Tensor::f32() const {
    if (dtype != Dtype::f32) fail_data("tensor is not F32");
    return std::get<std::vector<float>>(data);
}

const std::vector<double>& Tensor::f64() const {
    if (dtype != Dtype::f64) fail_data("tensor is not F64");
    return std::get<std::vector<double>>(data);
}

std::vector<float>& Tensor::f32() {
    if (dtype != Dtype::f32) fail_data("tensor is not F32");
    return std::get<std::vector<float>>(data);
}

std::vector<double>& Tensor::f64() {
    if (dtype != Dtype::f64) fail_data("tensor is not F64");
    return std::get<std::vector<double>>(data);
}

double Tensor::value_at(std::int64_t i) const {
    if (dtype == Dtype::f32) return static_cast<double>(f32()[static_cast<std::size_t>(i)]);
    return f64()[static_cast<std::size_t>(i)];
}

void Tensor::set_value(std::int64_t i, double v) {
    if (dtype == Dtype::f32)
        f32()[static_cast<std::size_t>(i)] = static_cast<float>(v);
    else
        f64()[static_cast<std::size_t>(i)] = v;
}

Tensor Tensor::to_dtype(Dtype target) const {
    if (target == dtype) return *this;
    Tensor out;
    out.dtype = target;
    out.shape = shape;
    std::size_t n = static_cast<std::size_t>(numel());
    if (target == Dtype::f64) {
        const auto& src = f32();
        std::vector<double> dst(n);
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(src[i]);
        out.data = std::move(dst);
    } else {
        const auto& src = f64();
        std::vector<float> dst(n);
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]);
        out.data = std::move(dst);
    }
    return out;
}

void Tensor::validate(const std::string& name) const {
    for (std::int64_t d : shape) {
        if (d <= 0) fail_data("tensor '" + name + "': non-positive shape entry in " + shape_str(shape));
    }
    std::int64_t n = shape_numel(shape);
    std::size_t stored = (dtype == Dtype::f32) ? std::get<std::vector<float>>(data).size()
                                               : std::get<std::vector<double>>(data).size();
    bool dtype_matches = (dtype == Dtype::f32) ? std::holds_alternative<std::vector<float>>(data)
                                               : std::holds_alternative<std::vector<double>>(data);
    if (!dtype_matches) fail_data("tensor '" + name + "': storage does not match declared dtype");
    if (static_cast<std::int64_t>(stored) != n)
        fail_data("tensor '" + name + "': " + std::to_string(stored) + " values for shape " + shape_str(shape));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void TensorMap::add(const std::string& name, Tensor tensor) {
    if (name.empty()) fail_data("tensor name must be non-empty");
    tensor.validate(name);
    auto [_, inserted] = entries_.emplace(name, std::move(tensor));
    if (!inserted) fail_data("duplicate tensor name '" + name + "'");
}

void TensorMap::set(const std::string& name, Tensor tensor) {
    if (name.empty()) fail_data("tensor name must be non-empty");
    tensor.validate(name);
    entries_[name] = std::move(tensor);
}

const Tensor* TensorMap::find(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
}

const Tensor& TensorMap::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail_data("missing tensor '" + name + "'");
    return it->second;
}

Tensor& TensorMap::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail_data("missing tensor '" + name + "'");
    return it->second;
}

std::vector<std::string> TensorMap::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

std::int64_t TensorMap::numel() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
}

TensorMap to_f64(const TensorMap& m) {
    TensorMap out;
    for (const auto& [name, t] : m) out.add(name, t.to_dtype(Dtype::f64));
    return out;
}

TensorMap to_f32(const TensorMap& m) {
    TensorMap out;
    for (const auto& [name, t] : m) out.add(name, t.to_dtype(Dtype::f32));
    return out;
}

double l2_norm(const TensorMap& m) {
    double acc = 0.0;
    for (const auto& [_, t] : m) {
        std::int64_t n = t.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            double v = t.value_at(i);
            acc += v * v;
        }
    }
    return std::sqrt(acc);
}

double max_abs_diff(const TensorMap& a, const TensorMap& b) {
    if (a.size() != b.size()) fail_data("tensor maps differ in entry count");
    double worst = 0.0;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) fail_data("tensor maps differ in names: '" + ia->first + "' vs '" + ib->first + "'");
        if (!same_shape(ia->second, ib->second)) fail_data("shape mismatch for tensor '" + ia->first + "'");
        std::int64_t n = ia->second.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            double d = std::abs(ia->second.value_at(i) - ib->second.value_at(i));
            if (d > worst) worst = d;
        }
    }
    return worst;
}

} // namespace cdsynth
