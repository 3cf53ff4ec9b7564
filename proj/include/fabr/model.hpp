#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "fabr/adamw.hpp"
#include "fabr/backbone.hpp"
#include "fabr/border.hpp"
#include "fabr/config.hpp"
#include "fabr/io.hpp"

namespace fabr {

// The full network: coarse segmentation backbone plus the border refinement
// head. Parameter order is the concatenation of the two fixed sub-orders;
// checkpoints name entries by position, so this order is part of the
// checkpoint format.
struct Model {
  BackboneParams backbone;
  GlcfParams glcf;

  static Model init(const RunConfig& cfg) {
    Model m;
    m.backbone = BackboneParams::init(cfg.backbone, cfg.seed);
    m.glcf = GlcfParams::init(cfg.glcf, cfg.backbone, cfg.seed);
    return m;
  }

  std::vector<Tensor*> params() {
    std::vector<Tensor*> out = backbone.params();
    for (Tensor* t : glcf.params()) out.push_back(t);
    return out;
  }

  // How many leading entries of params() belong to the backbone; the
  // two-stage schedule freezes exactly that prefix.
  std::size_t backbone_param_count() { return backbone.params().size(); }
};

inline std::string param_name(std::size_t index, std::size_t backbone_count) {
  char buf[32];
  if (index < backbone_count)
    std::snprintf(buf, sizeof(buf), "backbone.%04zu", index);
  else
    std::snprintf(buf, sizeof(buf), "glcf.%04zu", index - backbone_count);
  return buf;
}

// Model parameters followed by the AdamW moments for each (m then v),
// so load -> save reproduces the file byte for byte.
inline Checkpoint make_checkpoint(Model& model, AdamW& opt, std::uint64_t cfg_hash,
                                  std::uint32_t epoch) {
  Checkpoint ck;
  ck.config_hash = cfg_hash;
  ck.step = opt.step_count();
  ck.epoch = epoch;
  auto params = model.params();
  const std::size_t nb = model.backbone_param_count();
  if (opt.param_count() != params.size())
    throw std::runtime_error("checkpoint: optimizer is not attached to this model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedArray a;
    a.name = param_name(i, nb);
    a.shape.assign(params[i]->shape().begin(), params[i]->shape().end());
    a.values = params[i]->vec();
    ck.arrays.push_back(std::move(a));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedArray a;
    a.name = "adam_m." + param_name(i, nb);
    a.shape.assign(params[i]->shape().begin(), params[i]->shape().end());
    a.values = opt.moment1(i);
    NamedArray b;
    b.name = "adam_v." + param_name(i, nb);
    b.shape = a.shape;
    b.values = opt.moment2(i);
    ck.arrays.push_back(std::move(a));
    ck.arrays.push_back(std::move(b));
  }
  return ck;
}

// Restores parameters and optimizer moments in place. The model and optimizer
// must already be built from the same config the checkpoint was trained with;
// names and shapes are verified entry by entry.
inline void apply_checkpoint(const Checkpoint& ck, Model& model, AdamW& opt) {
  auto params = model.params();
  const std::size_t nb = model.backbone_param_count();
  const std::size_t n = params.size();
  if (opt.param_count() != n)
    throw std::runtime_error("checkpoint: optimizer is not attached to this model");
  if (ck.arrays.size() != 3 * n)
    throw std::runtime_error("checkpoint: expected " + std::to_string(3 * n) +
                             " arrays, file has " + std::to_string(ck.arrays.size()));
  auto expect = [](const NamedArray& a, const std::string& name, std::size_t numel) {
    if (a.name != name)
      throw std::runtime_error("checkpoint: expected array '" + name + "', found '" + a.name +
                               "'");
    if (a.values.size() != numel)
      throw std::runtime_error("checkpoint: array '" + name + "' has " +
                               std::to_string(a.values.size()) + " values, model wants " +
                               std::to_string(numel));
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = param_name(i, nb);
    const std::size_t numel = static_cast<std::size_t>(params[i]->numel());
    expect(ck.arrays[i], name, numel);
    std::copy(ck.arrays[i].values.begin(), ck.arrays[i].values.end(), params[i]->data());
    const NamedArray& am = ck.arrays[n + 2 * i];
    const NamedArray& av = ck.arrays[n + 2 * i + 1];
    expect(am, "adam_m." + name, numel);
    expect(av, "adam_v." + name, numel);
    opt.moment1(i) = am.values;
    opt.moment2(i) = av.values;
  }
  opt.set_step_count(ck.step);
}

// Loads a checkpoint file and verifies its config stamp. `force` skips the
// hash check (architecture mismatches still fail shape verification).
inline Checkpoint read_checkpoint_for(const std::string& path, std::uint64_t cfg_hash,
                                      bool force = false) {
  Checkpoint ck = read_checkpoint(path);
  if (!force && ck.config_hash != cfg_hash)
    throw std::runtime_error("checkpoint: config hash mismatch for " + path +
                             " (pass --force to load anyway)");
  return ck;
}

} // namespace fabr
