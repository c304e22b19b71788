// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loom/checkpoint.hpp"
#include "loom/common.hpp"
#include "loom/mask.hpp"
#include "loom/param_store.hpp"

namespace loom {

// ===========================================================================
// Per-element parameter ownership. Every element of every tensor is in
// exactly one state: FREE (unclaimed), PERMANENT_FROZEN (never trainable,
// always active at inference), or owned by one domain. Ownership only moves
// FREE -> domain, so earlier domains can never be disturbed by later ones.
// Domains form a DAG through ancestor lists; a domain's inference mask
// activates its own elements, its ancestors' (transitively), and the frozen
// set.
// ===========================================================================

inline constexpr int16_t kOwnerFree = -1;
inline constexpr int16_t kOwnerFrozen = -2;
inline constexpr int kMaxDomains = 254;  // owners serialize as one byte

struct DomainInfo {
  std::string name;
  std::vector<int> ancestors;  // direct ancestors, each an earlier ordinal
};

class MaskRegistry {
public:
  MaskRegistry() = default;

  // Starts with every element of every tensor FREE.
  explicit MaskRegistry(const ParamStore& params) {
    for (size_t i = 0; i < params.size(); ++i) {
      names_.push_back(params.name(i));
      shapes_.push_back(params.at(i).shape);
      tags_.push_back(params.tag(i));
      owners_.emplace_back(params.at(i).values.size(), kOwnerFree);
    }
  }

  // --- structure ----------------------------------------------------------

  size_t tensor_count() const { return names_.size(); }
  const std::string& tensor_name(size_t i) const { return names_[i]; }
  const Shape& tensor_shape(size_t i) const { return shapes_[i]; }
  const ParamGroupTag& tensor_tag(size_t i) const { return tags_[i]; }
  int16_t owner(size_t tensor, size_t elem) const { return owners_[tensor][elem]; }

  int domain_count() const { return static_cast<int>(domains_.size()); }
  const DomainInfo& domain(int d) const { return domains_[static_cast<size_t>(check_domain(d))]; }

  int find_domain(const std::string& name) const {
    for (size_t i = 0; i < domains_.size(); ++i)
      if (domains_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  void check_congruent(const ParamStore& params) const {
    LOOM_CHECK(params.size() == names_.size(), ShapeError,
               "mask registry covers " + std::to_string(names_.size()) + " tensors, model has " +
                   std::to_string(params.size()));
    for (size_t i = 0; i < names_.size(); ++i) {
      LOOM_CHECK(params.name(i) == names_[i], ShapeError,
                 "tensor order mismatch at '" + names_[i] + "'");
      LOOM_CHECK(params.at(i).shape == shapes_[i], ShapeError,
                 "tensor '" + names_[i] + "' shape changed");
    }
  }

  // --- state transitions --------------------------------------------------

  // PERMANENT_FROZEN claims every still-free element of matching tensors.
  void freeze_kind(ParamKind kind) {
    for (size_t i = 0; i < owners_.size(); ++i)
      if (tags_[i].kind == kind) freeze_tensor_index(i);
  }

  void freeze_tensor(const std::string& name) { freeze_tensor_index(index_of(name)); }

  int add_domain(const std::string& name, std::vector<int> ancestors = {}) {
    LOOM_CHECK(!name.empty(), ContractError, "domain name must be non-empty");
    LOOM_CHECK(find_domain(name) < 0, ContractError, "duplicate domain '" + name + "'");
    LOOM_CHECK(domain_count() < kMaxDomains, CapacityError, "domain table is full");
    const int ordinal = domain_count();
    for (int a : ancestors)
      LOOM_CHECK(a >= 0 && a < ordinal, ContractError,
                 "ancestor ordinal " + std::to_string(a) + " of domain '" + name +
                     "' must reference an earlier domain");
    domains_.push_back({name, std::move(ancestors)});
    return ordinal;
  }

  // Transfers ownership of every selected element to the domain. All
  // selected elements must currently be FREE.
  void assign_domain(int d, const BinaryMask& selection) {
    check_domain(d);
    LOOM_CHECK(selection.size() == names_.size(), ShapeError,
               "selection does not cover the registry's tensors");
    for (size_t i = 0; i < names_.size(); ++i) {
      const Tensor& sel = selection.at(names_[i]);
      LOOM_CHECK(sel.shape == shapes_[i], ShapeError,
                 "selection shape mismatch on '" + names_[i] + "'");
      for (size_t k = 0; k < sel.values.size(); ++k) {
        if (sel.values[k] == 0.0) continue;
        const int16_t cur = owners_[i][k];
        if (cur != kOwnerFree)
          throw OverlapError("element " + std::to_string(k) + " of '" + names_[i] +
                             "' is not free (owner: " + owner_str(cur) + "), cannot assign to '" +
                             domains_[static_cast<size_t>(d)].name + "'");
        owners_[i][k] = static_cast<int16_t>(d);
      }
    }
  }

  // --- mask views ----------------------------------------------------------

  BinaryMask free_mask() const {
    return collect([](int16_t o) { return o == kOwnerFree; });
  }

  BinaryMask frozen_mask() const {
    return collect([](int16_t o) { return o == kOwnerFrozen; });
  }

  // Everything that pruning and domain assignment may touch.
  BinaryMask eligible_mask() const {
    return collect([](int16_t o) { return o != kOwnerFrozen; });
  }

  // Elements the domain may train: exactly the ones it owns.
  BinaryMask update_mask(int d) const {
    check_domain(d);
    return collect([d](int16_t o) { return o == static_cast<int16_t>(d); });
  }

  // Elements active when decoding for the domain: its own, its ancestors'
  // (transitive), and the frozen set.
  BinaryMask inference_mask(int d) const {
    const std::vector<bool> in_cone = ancestor_cone(d);
    return collect([&](int16_t o) {
      if (o == kOwnerFrozen) return true;
      return o >= 0 && in_cone[static_cast<size_t>(o)];
    });
  }

  // --- accounting -----------------------------------------------------------

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& o : owners_) n += static_cast<int64_t>(o.size());
    return n;
  }

  int64_t count_owner(int16_t owner_value) const {
    int64_t n = 0;
    for (const auto& o : owners_)
      for (int16_t v : o) n += v == owner_value ? 1 : 0;
    return n;
  }

  int64_t free_count() const { return count_owner(kOwnerFree); }
  int64_t frozen_count() const { return count_owner(kOwnerFrozen); }
  int64_t domain_element_count(int d) const { return count_owner(static_cast<int16_t>(check_domain(d))); }
  int64_t eligible_count() const { return total_elements() - frozen_count(); }

  // Per-tensor and per-domain breakdown for reporting.
  nlohmann::json summary() const {
    nlohmann::json domains = nlohmann::json::array();
    for (int d = 0; d < domain_count(); ++d) {
      const DomainInfo& info = domains_[static_cast<size_t>(d)];
      domains.push_back({{"ordinal", d},
                         {"name", info.name},
                         {"ancestors", info.ancestors},
                         {"elements", domain_element_count(d)}});
    }
    nlohmann::json tensors = nlohmann::json::array();
    for (size_t i = 0; i < names_.size(); ++i) {
      std::vector<int64_t> per_domain(static_cast<size_t>(domain_count()), 0);
      int64_t free = 0, frozen = 0;
      for (int16_t v : owners_[i]) {
        if (v == kOwnerFree)
          ++free;
        else if (v == kOwnerFrozen)
          ++frozen;
        else
          ++per_domain[static_cast<size_t>(v)];
      }
      tensors.push_back({{"name", names_[i]},
                         {"shape", shapes_[i]},
                         {"free", free},
                         {"frozen", frozen},
                         {"per_domain", per_domain}});
    }
    return {{"total_elements", total_elements()},
            {"free", free_count()},
            {"frozen", frozen_count()},
            {"domains", domains},
            {"tensors", tensors}};
  }

private:
  template <typename Pred>
  BinaryMask collect(Pred pred) const {
    BinaryMask m;
    for (size_t i = 0; i < names_.size(); ++i) {
      Tensor t = Tensor::zeros(shapes_[i]);
      for (size_t k = 0; k < owners_[i].size(); ++k)
        if (pred(owners_[i][k])) t.values[k] = 1.0;
      m.add(names_[i], std::move(t));
    }
    return m;
  }

  std::vector<bool> ancestor_cone(int d) const {
    check_domain(d);
    std::vector<bool> in_cone(static_cast<size_t>(domain_count()), false);
    std::vector<int> stack{d};
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      if (in_cone[static_cast<size_t>(cur)]) continue;
      in_cone[static_cast<size_t>(cur)] = true;
      for (int a : domains_[static_cast<size_t>(cur)].ancestors) stack.push_back(a);
    }
    return in_cone;
  }

  void freeze_tensor_index(size_t i) {
    for (int16_t& v : owners_[i])
      if (v == kOwnerFree) v = kOwnerFrozen;
  }

  size_t index_of(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw ContractError("no tensor named '" + name + "' in mask registry");
  }

  int check_domain(int d) const {
    LOOM_CHECK(d >= 0 && d < domain_count(), ContractError,
               "domain ordinal " + std::to_string(d) + " out of range");
    return d;
  }

  static std::string owner_str(int16_t v) {
    if (v == kOwnerFree) return "free";
    if (v == kOwnerFrozen) return "frozen";
    return "domain " + std::to_string(v);
  }

  friend MaskRegistry load_masks(const std::filesystem::path&);
  friend void save_masks(const std::filesystem::path&, const MaskRegistry&);

  std::vector<std::string> names_;
  std::vector<Shape> shapes_;
  std::vector<ParamGroupTag> tags_;
  std::vector<std::vector<int16_t>> owners_;
  std::vector<DomainInfo> domains_;
};

// ---------------------------------------------------------------------------
// Mask file format: 8-byte magic, u64 LE header length, JSON header, then one
// owner byte per element per tensor in header order (0 free, 1 frozen,
// 2 + d for domain d). Each tensor's payload CRC-32 is recorded in the
// header.
// ---------------------------------------------------------------------------

inline constexpr char kMaskMagic[8] = {'L', 'O', 'O', 'M', 'M', 'A', 'S', 'K'};
inline constexpr uint32_t kMaskVersion = 1;

namespace detail {

// Ownership codes: 0 free, 1 frozen, 2+d for domain d. Codes are packed
// little-endian, `bits` per element, lowest bit of a byte first; each
// tensor's region starts on a byte boundary so it can carry its own CRC.
inline int owner_code_bits(size_t num_domains) {
  return std::max(1, static_cast<int>(std::bit_width(num_domains + 1)));
}

inline void pack_owner_codes(std::vector<uint8_t>& out, const std::vector<int16_t>& owners,
                             int bits) {
  const size_t start = out.size();
  out.resize(start + (owners.size() * static_cast<size_t>(bits) + 7) / 8, 0);
  size_t pos = 0;
  for (int16_t v : owners) {
    const auto code = static_cast<uint32_t>(v == kOwnerFree ? 0 : v == kOwnerFrozen ? 1 : 2 + v);
    for (int b = 0; b < bits; ++b, ++pos)
      if ((code >> b) & 1u) out[start + pos / 8] |= static_cast<uint8_t>(1u << (pos % 8));
  }
}

inline uint32_t unpack_owner_code(const uint8_t* region, size_t index, int bits) {
  uint32_t code = 0;
  size_t pos = index * static_cast<size_t>(bits);
  for (int b = 0; b < bits; ++b, ++pos)
    code |= static_cast<uint32_t>((region[pos / 8] >> (pos % 8)) & 1u) << b;
  return code;
}

}  // namespace detail

inline void save_masks(const std::filesystem::path& path, const MaskRegistry& reg) {
  const int bits = detail::owner_code_bits(reg.domains_.size());
  std::vector<uint8_t> payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (size_t i = 0; i < reg.names_.size(); ++i) {
    const size_t start = payload.size();
    detail::pack_owner_codes(payload, reg.owners_[i], bits);
    const ParamGroupTag& tag = reg.tags_[i];
    tensors.push_back({{"name", reg.names_[i]},
                       {"shape", reg.shapes_[i]},
                       {"kind", param_kind_name(tag.kind)},
                       {"side", side_name(tag.side)},
                       {"layer", tag.layer},
                       {"crc32", crc32(payload.data() + start, payload.size() - start)}});
  }
  nlohmann::json domains = nlohmann::json::array();
  for (const DomainInfo& d : reg.domains_)
    domains.push_back({{"name", d.name}, {"ancestors", d.ancestors}});
  nlohmann::json header = {{"format", "ownership_masks"},
                           {"version", kMaskVersion},
                           {"bits", bits},
                           {"tensors", tensors},
                           {"domains", domains}};
  detail::write_file_bytes(path, detail::build_container(kMaskMagic, header, payload));
}

inline MaskRegistry load_masks(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
  size_t off = 0;
  const nlohmann::json header = detail::parse_container_header(bytes, kMaskMagic, "mask", &off);

  const uint32_t version = header.at("version").get<uint32_t>();
  if (version > kMaskVersion)
    throw VersionError("mask file version " + std::to_string(version) +
                       " is newer than supported version " + std::to_string(kMaskVersion));

  MaskRegistry reg;
  for (const auto& d : header.at("domains"))
    reg.domains_.push_back(
        {d.at("name").get<std::string>(), d.at("ancestors").get<std::vector<int>>()});
  for (size_t i = 0; i < reg.domains_.size(); ++i)
    for (int a : reg.domains_[i].ancestors)
      if (a < 0 || a >= static_cast<int>(i))
        throw DataError("mask file domain '" + reg.domains_[i].name + "' has invalid ancestor");

  const int bits = header.at("bits").get<int>();
  if (bits < 1 || bits > 16) throw DataError("mask file has invalid bits-per-element");
  const auto num_codes = static_cast<uint32_t>(2 + reg.domains_.size());

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    const int64_t count64 = numel(shape);
    if (count64 <= 0) throw DataError("mask tensor '" + name + "' has invalid shape");
    const size_t count = static_cast<size_t>(count64);
    const size_t packed = (count * static_cast<size_t>(bits) + 7) / 8;
    if (off + packed > bytes.size())
      throw TruncationError("mask payload truncated in tensor '" + name + "'");
    const uint32_t want_crc = entry.at("crc32").get<uint32_t>();
    if (crc32(bytes.data() + off, packed) != want_crc)
      throw ChecksumError("mask payload CRC mismatch in tensor '" + name + "'");
    std::vector<int16_t> owners(count);
    for (size_t k = 0; k < count; ++k) {
      const uint32_t code = detail::unpack_owner_code(bytes.data() + off, k, bits);
      if (code == 0)
        owners[k] = kOwnerFree;
      else if (code == 1)
        owners[k] = kOwnerFrozen;
      else if (code < num_codes)
        owners[k] = static_cast<int16_t>(code - 2);
      else
        throw DataError("mask tensor '" + name + "' references undefined domain");
    }
    off += packed;
    reg.names_.push_back(name);
    reg.shapes_.push_back(std::move(shape));
    reg.tags_.push_back({param_kind_from_name(entry.at("kind").get<std::string>()),
                         side_from_name(entry.at("side").get<std::string>()),
                         entry.at("layer").get<int>()});
    reg.owners_.push_back(std::move(owners));
  }
  if (off != bytes.size())
    throw DataError("mask file has trailing bytes after payload");
  return reg;
}

}  // namespace loom
