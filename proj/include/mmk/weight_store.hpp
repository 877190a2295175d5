#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmk/tensor.hpp"

namespace mmk {

// Ordered name -> tensor map. Iteration (and the on-disk layout) follows
// insertion order; duplicate names are rejected.
class WeightStore {
public:
    void insert(std::string name, Tensor t);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor* find(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binary layout: magic "MMDW", little-endian u32 version (= 1), u32 entry
// count; per entry a u16 name length, the ASCII name, a u8 rank, rank u32
// extents, and the row-major values as little-endian 8-byte doubles.
void save_weights(const WeightStore& store, const std::string& path);
WeightStore load_weights(const std::string& path);

}  // namespace mmk
