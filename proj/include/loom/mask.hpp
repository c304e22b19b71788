// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "loom/common.hpp"
#include "loom/param_store.hpp"
#include "loom/tensor.hpp"

namespace loom {

// Per-tensor 0/1 masks congruent to a ParamStore. Entries are stored as
// doubles so masked evaluation is a plain elementwise multiply (x * 1.0 is
// bit-exact identity, x * 0.0 reads as a pruned weight).
class BinaryMask {
public:
  BinaryMask() = default;

  static BinaryMask ones_like(const ParamStore& params) { return filled(params, 1.0); }
  static BinaryMask zeros_like(const ParamStore& params) { return filled(params, 0.0); }

  void add(const std::string& name, Tensor t) {
    for (double v : t.values)
      if (v != 0.0 && v != 1.0)
        throw ContractError("mask entry for '" + name + "' is not binary");
    if (index_.count(name)) throw ContractError("duplicate mask entry '" + name + "'");
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  Tensor& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[index_of(name)]; }
  Tensor& at(size_t i) { return tensors_[i]; }
  const Tensor& at(size_t i) const { return tensors_[i]; }
  const std::string& name(size_t i) const { return names_[i]; }

  int64_t popcount() const {
    int64_t n = 0;
    for (const auto& t : tensors_)
      for (double v : t.values) n += (v != 0.0);
    return n;
  }

  int64_t popcount(const std::string& name) const {
    int64_t n = 0;
    for (double v : at(name).values) n += (v != 0.0);
    return n;
  }

  bool congruent(const ParamStore& params) const {
    if (size() != params.size()) return false;
    for (size_t i = 0; i < size(); ++i)
      if (names_[i] != params.name(i) || tensors_[i].shape != params.at(i).shape) return false;
    return true;
  }

  void check_congruent(const ParamStore& params, const std::string& what = "mask") const {
    if (!congruent(params))
      throw ShapeError(what + ": mask is not congruent with the parameter store");
  }

  bool operator==(const BinaryMask& o) const {
    if (names_ != o.names_) return false;
    for (size_t i = 0; i < size(); ++i)
      if (tensors_[i].shape != o.tensors_[i].shape || tensors_[i].values != o.tensors_[i].values)
        return false;
    return true;
  }

  // Elementwise intersection.
  BinaryMask operator&(const BinaryMask& o) const {
    BinaryMask out;
    if (names_ != o.names_) throw ShapeError("mask intersection over mismatched stores");
    for (size_t i = 0; i < size(); ++i) {
      Tensor t = tensors_[i];
      const Tensor& b = o.tensors_[i];
      if (t.shape != b.shape) throw ShapeError("mask intersection shape mismatch");
      for (int64_t k = 0; k < t.size(); ++k) t.at(k) *= b.at(k);
      out.add(names_[i], std::move(t));
    }
    return out;
  }

  // Element-wise union.
  BinaryMask operator|(const BinaryMask& o) const {
    BinaryMask out;
    if (names_ != o.names_) throw ShapeError("mask union over mismatched stores");
    for (size_t i = 0; i < size(); ++i) {
      Tensor t = tensors_[i];
      const Tensor& b = o.tensors_[i];
      if (t.shape != b.shape) throw ShapeError("mask union shape mismatch");
      for (int64_t k = 0; k < t.size(); ++k) t.at(k) = t.at(k) != 0.0 || b.at(k) != 0.0 ? 1.0 : 0.0;
      out.add(names_[i], std::move(t));
    }
    return out;
  }

private:
  static BinaryMask filled(const ParamStore& params, double fill) {
    BinaryMask m;
    for (size_t i = 0; i < params.size(); ++i)
      m.add(params.name(i), Tensor::full(params.at(i).shape, fill));
    return m;
  }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown mask entry '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace loom
