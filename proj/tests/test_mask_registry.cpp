// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "loom/mask_registry.hpp"

using namespace loom;

namespace {

ParamStore demo_params() {
  ParamStore p;
  p.add("embedding", Tensor::zeros({4, 3}), {ParamKind::embedding, Side::none, -1});
  p.add("enc.l0.ln1.gain", Tensor::zeros({3}), {ParamKind::layer_norm, Side::encoder, 0});
  p.add("enc.l0.attn.wq", Tensor::zeros({3, 3}), {ParamKind::attention, Side::encoder, 0});
  p.add("dec.l0.ffn.w1", Tensor::zeros({3, 5}), {ParamKind::ffn, Side::decoder, 0});
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// Selects `want` still-free elements of the registry, scanning in index order
// with a stride so successive picks interleave.
BinaryMask pick_free(const MaskRegistry& reg, int64_t want, int stride) {
  BinaryMask sel = reg.free_mask();
  int64_t kept = 0;
  int phase = 0;
  for (size_t t = 0; t < reg.tensor_count(); ++t) {
    Tensor& m = sel.at(reg.tensor_name(t));
    for (double& v : m.values) {
      if (v == 1.0) {
        if (kept >= want || (phase++ % stride) != 0) v = 0.0;
        else ++kept;
      }
    }
  }
  return sel;
}

}  // namespace

TEST_CASE("fresh registry starts all free and congruent") {
  const ParamStore p = demo_params();
  MaskRegistry reg(p);
  REQUIRE(reg.tensor_count() == 4);
  REQUIRE(reg.total_elements() == p.total_elements());
  REQUIRE(reg.free_count() == reg.total_elements());
  REQUIRE(reg.frozen_count() == 0);
  REQUIRE(reg.domain_count() == 0);
  REQUIRE_NOTHROW(reg.check_congruent(p));

  ParamStore other = demo_params();
  other.add("extra", Tensor::zeros({2}));
  REQUIRE_THROWS_AS(reg.check_congruent(other), ShapeError);
}

TEST_CASE("freezing claims only still-free elements") {
  MaskRegistry reg(demo_params());
  const int d = reg.add_domain("general");
  // Give the domain the first element of the embedding.
  BinaryMask sel = reg.free_mask();
  for (size_t t = 0; t < reg.tensor_count(); ++t) {
    Tensor& m = sel.at(reg.tensor_name(t));
    for (size_t k = 0; k < m.values.size(); ++k)
      m.values[k] = (reg.tensor_name(t) == "embedding" && k == 0) ? 1.0 : 0.0;
  }
  reg.assign_domain(d, sel);
  reg.freeze_kind(ParamKind::embedding);
  REQUIRE(reg.owner(0, 0) == static_cast<int16_t>(d));
  for (size_t k = 1; k < 12; ++k) REQUIRE(reg.owner(0, k) == kOwnerFrozen);
  REQUIRE(reg.frozen_count() == 11);
  REQUIRE(reg.domain_element_count(d) == 1);

  reg.freeze_tensor("enc.l0.ln1.gain");
  REQUIRE(reg.frozen_count() == 14);
}

TEST_CASE("assignment rejects overlap and unknown domains") {
  MaskRegistry reg(demo_params());
  const int a = reg.add_domain("a");
  const int b = reg.add_domain("b", {a});
  BinaryMask sel = pick_free(reg, 5, 2);
  reg.assign_domain(a, sel);
  REQUIRE_THROWS_AS(reg.assign_domain(b, sel), OverlapError);
  REQUIRE_THROWS_AS(reg.assign_domain(7, reg.free_mask()), ContractError);

  reg.freeze_tensor("dec.l0.ffn.w1");
  BinaryMask frozen_sel = reg.frozen_mask();
  REQUIRE_THROWS_AS(reg.assign_domain(b, frozen_sel), OverlapError);
}

TEST_CASE("domain bookkeeping validates names and ancestors") {
  MaskRegistry reg(demo_params());
  REQUIRE_THROWS_AS(reg.add_domain(""), ContractError);
  const int a = reg.add_domain("general");
  REQUIRE(a == 0);
  REQUIRE_THROWS_AS(reg.add_domain("general"), ContractError);
  REQUIRE_THROWS_AS(reg.add_domain("child", {1}), ContractError);
  const int b = reg.add_domain("child", {a});
  REQUIRE(reg.domain(b).ancestors == std::vector<int>{a});
  REQUIRE(reg.find_domain("child") == b);
  REQUIRE(reg.find_domain("nope") == -1);
}

TEST_CASE("mask views partition the elements") {
  MaskRegistry reg(demo_params());
  reg.freeze_kind(ParamKind::layer_norm);
  const int g = reg.add_domain("general");
  reg.assign_domain(g, pick_free(reg, 8, 3));
  const int c = reg.add_domain("child", {g});
  reg.assign_domain(c, pick_free(reg, 4, 2));

  const BinaryMask free = reg.free_mask();
  const BinaryMask frozen = reg.frozen_mask();
  const BinaryMask eligible = reg.eligible_mask();
  const BinaryMask up_g = reg.update_mask(g);
  const BinaryMask up_c = reg.update_mask(c);
  const BinaryMask inf_c = reg.inference_mask(c);

  for (size_t t = 0; t < reg.tensor_count(); ++t) {
    const std::string& name = reg.tensor_name(t);
    for (size_t k = 0; k < free.at(name).values.size(); ++k) {
      const double f = free.at(name).values[k];
      const double z = frozen.at(name).values[k];
      const double ug = up_g.at(name).values[k];
      const double uc = up_c.at(name).values[k];
      REQUIRE(f + z + ug + uc == 1.0);  // exactly one class owns each element
      REQUIRE(eligible.at(name).values[k] == 1.0 - z);
      // The child's inference cone: frozen plus its own and ancestor weights.
      REQUIRE(inf_c.at(name).values[k] == ((z + ug + uc > 0.0) ? 1.0 : 0.0));
    }
  }
  REQUIRE(reg.free_count() + reg.frozen_count() + reg.domain_element_count(g) +
              reg.domain_element_count(c) ==
          reg.total_elements());
}

TEST_CASE("inference cone follows ancestors transitively") {
  MaskRegistry reg(demo_params());
  const int a = reg.add_domain("a");
  reg.assign_domain(a, pick_free(reg, 3, 5));
  const int b = reg.add_domain("b", {a});
  reg.assign_domain(b, pick_free(reg, 3, 4));
  const int c = reg.add_domain("c", {b});
  reg.assign_domain(c, pick_free(reg, 3, 3));
  const int lone = reg.add_domain("lone");
  reg.assign_domain(lone, pick_free(reg, 3, 2));

  const BinaryMask inf = reg.inference_mask(c);
  // a is reachable through b even though c does not list it directly.
  for (size_t t = 0; t < reg.tensor_count(); ++t)
    for (size_t k = 0; k < inf.at(reg.tensor_name(t)).values.size(); ++k) {
      const int16_t o = reg.owner(t, k);
      const bool in_cone = o == kOwnerFrozen || o == a || o == b || o == c;
      REQUIRE(inf.at(reg.tensor_name(t)).values[k] == (in_cone ? 1.0 : 0.0));
    }
}

TEST_CASE("randomized partitions never overlap and round-trip through disk") {
  Rng rng(4242);
  const auto file = temp_path("loom_masks_prop.masks");
  for (int rep = 0; rep < 60; ++rep) {
    ParamStore p;
    const int tensors = 1 + static_cast<int>(rng.below(4));
    for (int t = 0; t < tensors; ++t) {
      const int64_t n = 1 + static_cast<int64_t>(rng.below(40));
      p.add("t" + std::to_string(t), Tensor::zeros({n}),
            {t % 2 == 0 ? ParamKind::ffn : ParamKind::attention, Side::none, t});
    }
    MaskRegistry reg(p);
    if (rng.below(2) == 0) reg.freeze_tensor("t0");

    const int domains = 1 + static_cast<int>(rng.below(5));
    for (int d = 0; d < domains; ++d) {
      std::vector<int> anc;
      for (int a = 0; a < d; ++a)
        if (rng.below(3) == 0) anc.push_back(a);
      const int ord = reg.add_domain("d" + std::to_string(d), anc);
      BinaryMask sel = reg.free_mask();
      for (size_t t = 0; t < reg.tensor_count(); ++t)
        for (double& v : sel.at(reg.tensor_name(t)).values)
          if (v == 1.0 && rng.below(3) != 0) v = 0.0;
      reg.assign_domain(ord, sel);
    }

    // Ownership classes always partition the registry.
    int64_t owned = 0;
    for (int d = 0; d < reg.domain_count(); ++d) owned += reg.domain_element_count(d);
    REQUIRE(reg.free_count() + reg.frozen_count() + owned == reg.total_elements());

    // Update masks of distinct domains are disjoint.
    for (int d1 = 0; d1 < reg.domain_count(); ++d1)
      for (int d2 = d1 + 1; d2 < reg.domain_count(); ++d2) {
        const BinaryMask m1 = reg.update_mask(d1);
        const BinaryMask m2 = reg.update_mask(d2);
        for (size_t t = 0; t < reg.tensor_count(); ++t) {
          const std::string& nm = reg.tensor_name(t);
          for (size_t k = 0; k < m1.at(nm).values.size(); ++k)
            REQUIRE(m1.at(nm).values[k] * m2.at(nm).values[k] == 0.0);
        }
      }

    save_masks(file, reg);
    const MaskRegistry back = load_masks(file);
    REQUIRE(back.tensor_count() == reg.tensor_count());
    REQUIRE(back.domain_count() == reg.domain_count());
    for (int d = 0; d < reg.domain_count(); ++d) {
      REQUIRE(back.domain(d).name == reg.domain(d).name);
      REQUIRE(back.domain(d).ancestors == reg.domain(d).ancestors);
    }
    for (size_t t = 0; t < reg.tensor_count(); ++t) {
      REQUIRE(back.tensor_name(t) == reg.tensor_name(t));
      REQUIRE(back.tensor_shape(t) == reg.tensor_shape(t));
      const int64_t n = numel(reg.tensor_shape(t));
      for (int64_t k = 0; k < n; ++k)
        REQUIRE(back.owner(t, static_cast<size_t>(k)) == reg.owner(t, static_cast<size_t>(k)));
    }
  }
  std::filesystem::remove(file);
}

TEST_CASE("mask files detect corruption, truncation, and bad magic") {
  MaskRegistry reg(demo_params());
  const int g = reg.add_domain("general");
  reg.assign_domain(g, pick_free(reg, 9, 2));
  const auto file = temp_path("loom_masks_corrupt.masks");
  save_masks(file, reg);

  std::vector<char> bytes;
  {
    std::ifstream in(file, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  SECTION("clean file loads") { REQUIRE_NOTHROW(load_masks(file)); }
  SECTION("flipped payload byte fails the checksum") {
    bytes.back() = static_cast<char>(bytes.back() ^ 0x5a);
    std::ofstream(file, std::ios::binary).write(bytes.data(), static_cast<long>(bytes.size()));
    REQUIRE_THROWS_AS(load_masks(file), ChecksumError);
  }
  SECTION("truncated payload is reported") {
    std::ofstream(file, std::ios::binary).write(bytes.data(), static_cast<long>(bytes.size() - 2));
    REQUIRE_THROWS_AS(load_masks(file), TruncationError);
  }
  SECTION("foreign magic is rejected") {
    bytes[0] = 'X';
    std::ofstream(file, std::ios::binary).write(bytes.data(), static_cast<long>(bytes.size()));
    REQUIRE_THROWS_AS(load_masks(file), DataError);
  }
  std::filesystem::remove(file);
}

TEST_CASE("mask files reject codes past the domain table") {
  // Hand-build a container whose single element encodes owner code 3 while
  // only one domain exists (valid codes are 0, 1, 2).
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<uint8_t> payload{0x03};
  tensors.push_back({{"name", "w"},
                     {"shape", Shape{1}},
                     {"kind", "ffn"},
                     {"side", "none"},
                     {"layer", 0},
                     {"crc32", crc32(payload.data(), payload.size())}});
  nlohmann::json header = {{"format", "ownership_masks"},
                           {"version", 1},
                           {"bits", 2},
                           {"tensors", tensors},
                           {"domains", {{{"name", "only"}, {"ancestors", nlohmann::json::array()}}}}};
  const auto file = temp_path("loom_masks_badcode.masks");
  detail::write_file_bytes(file, detail::build_container(kMaskMagic, header, payload));
  REQUIRE_THROWS_AS(load_masks(file), DataError);
  std::filesystem::remove(file);
}

TEST_CASE("summary reports counts by domain and tensor") {
  MaskRegistry reg(demo_params());
  reg.freeze_kind(ParamKind::embedding);
  const int g = reg.add_domain("general");
  reg.assign_domain(g, pick_free(reg, 6, 1));
  const nlohmann::json s = reg.summary();
  REQUIRE(s.at("total_elements").get<int64_t>() == reg.total_elements());
  REQUIRE(s.at("frozen").get<int64_t>() == 12);
  REQUIRE(s.at("domains").size() == 1);
  REQUIRE(s.at("domains")[0].at("name") == "general");
  REQUIRE(s.at("domains")[0].at("elements").get<int64_t>() == 6);
  REQUIRE(s.at("tensors").size() == 4);
}
