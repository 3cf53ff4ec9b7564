#include "fabr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fabr/io.hpp"
#include "fabr/losses.hpp"

namespace fabr {

namespace fs = std::filesystem;

namespace {

std::string case_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%03d", i);
  return buf;
}

std::string ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.bin", epoch);
  return buf;
}

MaskU8 mask_from_probs(const Tensor& probs, float tau) {
  MaskU8 m(probs.dim(2), probs.dim(3), probs.dim(4));
  const float* p = probs.data();
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = static_cast<std::uint8_t>(p[i] > tau);
  return m;
}

} // namespace

// Border points come from the ground-truth pyramid during training; the
// test phase locates them on the prediction instead (see predict()).
LossBundle compute_losses(Tape* tape, const Model& model, const Tensor& x,
                          const std::vector<MaskU8>& pyr, const LossWeights& w) {
  CoarseOutputs coarse = backbone_forward(tape, x, model.backbone);
  std::array<Tensor, kNumScales> targets;
  for (int l = 0; l < kNumScales; ++l) targets[l] = mask_to_tensor(pyr[l]);

  LossBundle out;
  out.ordinary = ordinary_loss(tape, coarse.probs, targets, w);

  std::array<BvpSet, kNumScales> bvps;
  for (int l = 0; l < kNumScales; ++l) bvps[l] = detect_bvp(pyr[l], l);
  auto point_logits = refine_points(tape, coarse, bvps, model.glcf);
  std::array<Tensor, kNumScales> point_probs, point_targets;
  for (int l = 0; l < kNumScales; ++l) {
    if (!point_logits[l].defined()) continue;
    point_probs[l] = sigmoid(tape, point_logits[l]);
    Tensor t({static_cast<int>(bvps[l].points.size())});
    for (std::size_t i = 0; i < bvps[l].points.size(); ++i) {
      const Coord& c = bvps[l].points[i];
      t.data()[i] = static_cast<float>(pyr[l].at(c[0], c[1], c[2]));
    }
    point_targets[l] = t;
  }
  out.border = border_loss(tape, point_probs, point_targets, w);
  out.total = total_loss(tape, out.ordinary, out.border);
  return out;
}

namespace {

double mean_val_dice(const Model& model, const Dataset& ds, const std::vector<int>& indices,
                     float tau) {
  if (indices.empty()) return 0.0;
  double sum = 0.0;
  for (int idx : indices) {
    Tensor x = volume_to_tensor(ds.cases[idx].volume);
    CoarseOutputs coarse = backbone_forward<float>(nullptr, x, model.backbone);
    sum += hard_dice(mask_from_probs(coarse.probs[0], tau), ds.cases[idx].mask);
  }
  return sum / static_cast<double>(indices.size());
}

std::vector<int> names_to_indices(const std::map<std::string, int>& by_name,
                                  const std::vector<std::string>& names,
                                  const std::string& where) {
  std::vector<int> out;
  for (const std::string& n : names) {
    auto it = by_name.find(n);
    if (it == by_name.end())
      throw std::runtime_error(where + ": split references unknown case '" + n + "'");
    out.push_back(it->second);
  }
  return out;
}

} // namespace

int generate_dataset(const RunConfig& cfg) {
  cfg.phantom.validate();
  fs::create_directories(cfg.data_dir);
  std::string manifest = "dims = " + std::to_string(cfg.phantom.grid[0]) + "," +
                         std::to_string(cfg.phantom.grid[1]) + "," +
                         std::to_string(cfg.phantom.grid[2]) + "\n";
  for (int i = 0; i < cfg.data.count; ++i) {
    PhantomConfig pc = cfg.phantom;
    // A rejected geometry (branch steered out of the grid) retries with a
    // sibling seed; the attempt sequence is part of the derivation, so the
    // dataset stays a pure function of (config, seed).
    PhantomSample sample = [&] {
      std::string last_error;
      for (int attempt = 0; attempt < 32; ++attempt) {
        pc.seed = derive_seed(cfg.seed, 0x9e0ull, static_cast<std::uint64_t>(i) * 64 + attempt);
        try {
          return generate_phantom(pc);
        } catch (const std::exception& e) {
          last_error = e.what();
        }
      }
      throw std::runtime_error("phantom-gen: case " + std::to_string(i) +
                               " failed repeatedly: " + last_error);
    }();
    const std::string name = case_name(i);
    const std::string base = (fs::path(cfg.data_dir) / name).string();
    write_volume(base + ".vol", sample.intensity);
    write_mask(base + ".mask", sample.mask);
    write_branches(base + ".branches", sample.tree.branches);
    manifest += "case " + name + "\n";
  }
  write_text_file((fs::path(cfg.data_dir) / "manifest.txt").string(), manifest);
  if (cfg.data.count > 0) {
    auto buckets = split_dataset(cfg.data.count,
                                 {cfg.data.train_ratio, cfg.data.val_ratio, cfg.data.test_ratio},
                                 derive_seed(cfg.seed, 0x5b17ull));
    const char* names[3] = {"train", "val", "test"};
    std::string split;
    for (int b = 0; b < 3; ++b) {
      split += names[b];
      for (int idx : buckets[b]) split += " " + case_name(idx);
      split += "\n";
    }
    write_text_file((fs::path(cfg.data_dir) / "split.txt").string(), split);
  }
  return cfg.data.count;
}

Dataset load_dataset(const std::string& data_dir) {
  const std::string manifest_path = (fs::path(data_dir) / "manifest.txt").string();
  std::istringstream manifest(read_text_file(manifest_path));
  Dataset ds;
  std::map<std::string, int> by_name;
  std::string line;
  bool have_dims = false;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "dims") {
      std::string eq, rest;
      ls >> eq >> rest;
      if (eq != "=") throw std::runtime_error(manifest_path + ": malformed dims line");
      std::istringstream ds_in(rest);
      std::string part;
      for (int a = 0; a < 3; ++a) {
        if (!std::getline(ds_in, part, ','))
          throw std::runtime_error(manifest_path + ": malformed dims line");
        ds.dims[a] = std::stoi(part);
      }
      have_dims = true;
    } else if (head == "case") {
      std::string name;
      ls >> name;
      if (name.empty()) throw std::runtime_error(manifest_path + ": malformed case line");
      CaseData c;
      c.name = name;
      const std::string base = (fs::path(data_dir) / name).string();
      c.volume = read_volume(base + ".vol");
      c.mask = read_mask(base + ".mask");
      c.branches = read_branches(base + ".branches");
      if (c.volume.dims != c.mask.dims)
        throw std::runtime_error(base + ": volume and mask dims differ");
      by_name[name] = static_cast<int>(ds.cases.size());
      ds.cases.push_back(std::move(c));
    } else {
      throw std::runtime_error(manifest_path + ": unknown manifest line: " + line);
    }
  }
  if (!have_dims) throw std::runtime_error(manifest_path + ": missing dims line");
  if (ds.cases.empty()) return ds;

  const std::string split_path = (fs::path(data_dir) / "split.txt").string();
  std::istringstream split(read_text_file(split_path));
  while (std::getline(split, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head, name;
    ls >> head;
    std::vector<std::string> names;
    while (ls >> name) names.push_back(name);
    if (head == "train")
      ds.train = names_to_indices(by_name, names, split_path);
    else if (head == "val")
      ds.val = names_to_indices(by_name, names, split_path);
    else if (head == "test")
      ds.test = names_to_indices(by_name, names, split_path);
    else
      throw std::runtime_error(split_path + ": unknown split '" + head + "'");
  }
  return ds;
}

Tensor volume_to_tensor(const VolumeF& vol) {
  Tensor t({1, 1, vol.dims[0], vol.dims[1], vol.dims[2]});
  std::copy(vol.v.begin(), vol.v.end(), t.data());
  return t;
}

Tensor mask_to_tensor(const MaskU8& mask) {
  Tensor t({1, 1, mask.dims[0], mask.dims[1], mask.dims[2]});
  for (std::size_t i = 0; i < mask.v.size(); ++i) t.data()[i] = static_cast<float>(mask.v[i]);
  return t;
}

double hard_dice(const MaskU8& pred, const MaskU8& gt) {
  if (pred.dims != gt.dims) throw std::runtime_error("dice: dims differ");
  std::int64_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    inter += pred.v[i] && gt.v[i];
    p += pred.v[i] != 0;
    g += gt.v[i] != 0;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

Prediction predict(const Model& model, const VolumeF& vol, float tau) {
  Prediction out;
  Tensor x = volume_to_tensor(vol);
  out.coarse = backbone_forward<float>(nullptr, x, model.backbone);
  out.coarse_mask = mask_from_probs(out.coarse.probs[0], tau);
  out.bvp = detect_bvp(out.coarse_mask, 0);
  if (out.bvp.points.empty()) {
    out.rendered = out.coarse_mask;
    return out;
  }
  Tensor logits =
      refine_layer<float>(nullptr, out.coarse.feats[0], out.coarse.feats[adjacent_scale(0)],
                          out.bvp.points, 0, model.glcf.layer[0]);
  out.rendered = render_mask(out.coarse.probs[0], logits, out.bvp.points, tau);
  return out;
}

std::string epoch_csv_header() { return "epoch,ordinary_loss,border_loss,total,val_dice"; }

std::string epoch_csv_row(const EpochRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f", row.epoch, row.ordinary, row.border,
                row.total, row.val_dice);
  return buf;
}

TrainResult train_run(const RunConfig& cfg, const Dataset& ds, const std::string& resume_path,
                      bool force_resume, int stop_after_epoch) {
  cfg.backbone.validate();
  cfg.glcf.validate();
  if (ds.train.empty()) throw std::runtime_error("train: dataset has no training cases");
  for (int d : ds.dims)
    if (d % 16 != 0)
      throw std::runtime_error(
          "train: volume sides must be divisible by 16 so every scale of the "
          "ground-truth pyramid has even dims, got " +
          std::to_string(d));

  Model model = Model::init(cfg);
  AdamWConfig ocfg;
  ocfg.lr = cfg.optim.lr;
  ocfg.beta1 = cfg.optim.beta1;
  ocfg.beta2 = cfg.optim.beta2;
  ocfg.weight_decay = cfg.optim.weight_decay;
  AdamW opt(ocfg);
  auto params = model.params();
  opt.attach(params);

  const std::uint64_t cfg_hash = config_hash(cfg);
  int start_epoch = 1;
  if (!resume_path.empty()) {
    Checkpoint ck = read_checkpoint_for(resume_path, cfg_hash, force_resume);
    apply_checkpoint(ck, model, opt);
    start_epoch = static_cast<int>(ck.epoch) + 1;
  }

  fs::create_directories(cfg.out_dir);
  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.csv").string();
  std::ofstream log(log_path, start_epoch == 1 ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("train: cannot write " + log_path);
  if (start_epoch == 1) log << epoch_csv_header() << "\n";

  const LossWeights weights;
  TrainResult result;
  result.epochs_completed = start_epoch - 1;
  const int last_epoch = stop_after_epoch > 0 ? std::min(stop_after_epoch, cfg.optim.epochs)
                                              : cfg.optim.epochs;

  for (int epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    // Stage two of the optional schedule: backbone frozen, head keeps going.
    if (cfg.two_stage && epoch > cfg.optim.epochs / 2)
      opt.set_frozen_prefix(model.backbone_param_count());

    std::vector<int> order = ds.train;
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5bffull, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double sum_ol = 0.0, sum_bl = 0.0, sum_total = 0.0;
    int in_batch = 0;
    opt.zero_grad();
    for (std::size_t bi = 0; bi < order.size(); ++bi) {
      const CaseData& c = ds.cases[order[bi]];
      VolumeF vol = c.volume;
      MaskU8 msk = c.mask;
      random_flip_augment(vol, msk,
                          derive_seed(cfg.seed, 0xf11bull,
                                      static_cast<std::uint64_t>(epoch) * 1000003ull + bi));
      const std::vector<MaskU8> pyr = mask_pyramid(msk, kNumScales);

      Tape tape;
      // Layer kernels trap non-finite activations as they appear; fold those
      // into the same abort signal as a non-finite loss so callers see one
      // error type with the epoch/batch/case that produced it.
      try {
        LossBundle losses = compute_losses(&tape, model, volume_to_tensor(vol), pyr, weights);
        const float total_value = losses.total.item();
        if (!std::isfinite(total_value))
          throw NanLossError(epoch, static_cast<int>(bi), c.name);
        sum_ol += losses.ordinary.item();
        sum_bl += losses.border.item();
        sum_total += total_value;
        tape.backward(losses.total);
      } catch (const NanLossError&) {
        throw;
      } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos)
          throw NanLossError(epoch, static_cast<int>(bi), c.name);
        throw;
      }
      ++in_batch;

      const bool flush = in_batch == cfg.optim.batch_size || bi + 1 == order.size();
      if (!flush) continue;
      if (in_batch > 1) {
        const float inv = 1.0f / static_cast<float>(in_batch);
        for (Tensor* p : params) {
          float* g = p->grad();
          for (std::int64_t j = 0; j < p->numel(); ++j) g[j] *= inv;
        }
      }
      opt.step();
      opt.zero_grad();
      in_batch = 0;
    }

    EpochRow row;
    row.epoch = epoch;
    const double n = static_cast<double>(order.size());
    row.ordinary = sum_ol / n;
    row.border = sum_bl / n;
    row.total = sum_total / n;
    row.val_dice = mean_val_dice(model, ds, ds.val, cfg.threshold);
    log << epoch_csv_row(row) << "\n";
    log.flush();

    const std::string ckpt_path = (fs::path(cfg.out_dir) / ckpt_name(epoch)).string();
    write_checkpoint(ckpt_path, make_checkpoint(model, opt, cfg_hash,
                                                static_cast<std::uint32_t>(epoch)));
    result.rows.push_back(row);
    result.last_checkpoint = ckpt_path;
    result.epochs_completed = epoch;
  }
  return result;
}

std::vector<CaseEval> evaluate_split(const Model& model, const RunConfig& cfg, const Dataset& ds,
                                     const std::vector<int>& indices) {
  std::vector<CaseEval> out;
  for (int idx : indices) {
    const CaseData& c = ds.cases[idx];
    Prediction pred = predict(model, c.volume, cfg.threshold);
    CaseEval ce;
    ce.name = c.name;
    ce.coarse = evaluate_case(pred.coarse_mask, c.mask, c.branches);
    ce.rendered = evaluate_case(pred.rendered, c.mask, c.branches);
    ce.bvp_count = pred.bvp.points.size();
    if (!pred.bvp.points.empty()) {
      std::int64_t ok_coarse = 0, ok_rendered = 0;
      for (const Coord& p : pred.bvp.points) {
        ok_coarse += pred.coarse_mask.at(p[0], p[1], p[2]) == c.mask.at(p[0], p[1], p[2]);
        ok_rendered += pred.rendered.at(p[0], p[1], p[2]) == c.mask.at(p[0], p[1], p[2]);
      }
      ce.border_acc_coarse =
          static_cast<double>(ok_coarse) / static_cast<double>(pred.bvp.points.size());
      ce.border_acc_rendered =
          static_cast<double>(ok_rendered) / static_cast<double>(pred.bvp.points.size());
    }
    out.push_back(std::move(ce));
  }
  return out;
}

} // namespace fabr
