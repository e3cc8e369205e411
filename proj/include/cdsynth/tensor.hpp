#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "cdsynth/error.hpp"

namespace cdsynth {

enum class Dtype { f32, f64 };

inline const char* to_string(Dtype d) { return d == Dtype::f32 ? "F32" : "F64"; }
inline std::size_t itemsize(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

// Dense row-major tensor. Values live in a single flat buffer whose length
// equals the product of the shape entries.
struct Tensor {
    Dtype dtype = Dtype::f32;
    std::vector<std::int64_t> shape;
    std::variant<std::vector<float>, std::vector<double>> data;

    static Tensor zeros(Dtype dtype, std::vector<std::int64_t> shape);
    static Tensor from_f32(std::vector<std::int64_t> shape, std::vector<float> values);
    static Tensor from_f64(std::vector<std::int64_t> shape, std::vector<double> values);

    std::int64_t numel() const;

    const std::vector<float>& f32() const;
    const std::vector<double>& f64() const;
    std::vector<float>& f32();
    std::vector<double>& f64();

    // Element access through a double regardless of storage type.
    double value_at(std::int64_t i) const;
    void set_value(std::int64_t i, double v);

    Tensor to_dtype(Dtype target) const;

    // Raises a data error when the shape/data invariants do not hold.
    void validate(const std::string& name) const;
};

bool same_shape(const Tensor& a, const Tensor& b);

// Ordered collection of named tensors. Iteration is in lexicographic name
// order, which fixes the flattening order used by every reduction over a map.
class TensorMap {
public:
    using Storage = std::map<std::string, Tensor>;
    using const_iterator = Storage::const_iterator;

    TensorMap() = default;

    // Inserts a new entry; rejects empty names, invalid tensors, and names
    // that are already present.
    void add(const std::string& name, Tensor tensor);
    // Inserts or replaces.
    void set(const std::string& name, Tensor tensor);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor* find(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const_iterator begin() const { return entries_.begin(); }
    const_iterator end() const { return entries_.end(); }

    std::vector<std::string> names() const;
    // Total element count across all tensors.
    std::int64_t numel() const;

private:
    Storage entries_;
};

TensorMap to_f64(const TensorMap& m);
TensorMap to_f32(const TensorMap& m);

// Flattened L2 norm over all entries, accumulated in double precision.
double l2_norm(const TensorMap& m);

// Largest absolute element-wise difference between two maps with identical
// names and shapes; raises a data error on structural mismatch.
double max_abs_diff(const TensorMap& a, const TensorMap& b);

} // namespace cdsynth
