// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "loom/common.hpp"
#include "loom/tensor.hpp"

namespace loom {

enum class ParamKind : uint8_t {
  embedding,
  layer_norm,
  attention,
  ffn,
  output_projection,
  adapter,
};

enum class Side : uint8_t { none, encoder, decoder };

inline const char* param_kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::embedding: return "embedding";
    case ParamKind::layer_norm: return "layer_norm";
    case ParamKind::attention: return "attention";
    case ParamKind::ffn: return "ffn";
    case ParamKind::output_projection: return "output_projection";
    case ParamKind::adapter: return "adapter";
  }
  return "?";
}

inline const char* side_name(Side s) {
  switch (s) {
    case Side::none: return "none";
    case Side::encoder: return "encoder";
    case Side::decoder: return "decoder";
  }
  return "?";
}

inline ParamKind param_kind_from_name(const std::string& s) {
  for (ParamKind k : {ParamKind::embedding, ParamKind::layer_norm, ParamKind::attention,
                      ParamKind::ffn, ParamKind::output_projection, ParamKind::adapter})
    if (s == param_kind_name(k)) return k;
  throw ContractError("unknown parameter kind '" + s + "'");
}

inline Side side_from_name(const std::string& s) {
  for (Side v : {Side::none, Side::encoder, Side::decoder})
    if (s == side_name(v)) return v;
  throw ContractError("unknown side '" + s + "'");
}

// Structural role of a parameter tensor: group kind, encoder/decoder side,
// layer index (-1 when not layer-scoped). Every entry of a built model
// carries exactly one tag.
struct ParamGroupTag {
  ParamKind kind = ParamKind::attention;
  Side side = Side::none;
  int layer = -1;

  bool operator==(const ParamGroupTag&) const = default;
};

// Named, ordered collection of dense parameter tensors. Iteration order is
// insertion order, which makes whole-store operations deterministic.
class ParamStore {
public:
  void add(const std::string& name, Tensor t, ParamGroupTag tag = {}) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    tags_.push_back(tag);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  size_t size() const { return names_.size(); }

  const std::vector<std::string>& names() const { return names_; }

  const std::string& name(size_t i) const { return names_[i]; }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[index_of(name)]; }

  Tensor& at(size_t i) { return tensors_[i]; }
  const Tensor& at(size_t i) const { return tensors_[i]; }

  ParamGroupTag tag(size_t i) const { return tags_[i]; }
  ParamGroupTag tag(const std::string& name) const { return tags_[index_of(name)]; }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  // Same names, shapes and tags, all values zero.
  ParamStore zeros_like() const {
    ParamStore out;
    for (size_t i = 0; i < size(); ++i)
      out.add(names_[i], Tensor::zeros(tensors_[i].shape), tags_[i]);
    return out;
  }

  bool congruent(const ParamStore& o) const {
    if (size() != o.size()) return false;
    for (size_t i = 0; i < size(); ++i)
      if (names_[i] != o.names_[i] || tensors_[i].shape != o.tensors_[i].shape) return false;
    return true;
  }

  bool operator==(const ParamStore& o) const {
    if (!congruent(o)) return false;
    for (size_t i = 0; i < size(); ++i)
      if (tensors_[i].values != o.tensors_[i].values) return false;
    return true;
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<ParamGroupTag> tags_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace loom
