#include <cstdio>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "fabr/config.hpp"
#include "fabr/io.hpp"
#include "fabr/model.hpp"
#include "fabr/rng.hpp"
#include "fabr/train.hpp"

using namespace fabr;
namespace fs = std::filesystem;

namespace {

// Scratch directory per test run; doctest executes cases in order within one
// process, so a fixed location is fine.
fs::path scratch() {
  fs::path p = fs::temp_directory_path() / "fabr_io_test";
  fs::create_directories(p);
  return p;
}

RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.seed_set = true;
  cfg.backbone.stage_channels = {4, 8, 12, 16};
  cfg.backbone.gmf_count = 2;
  cfg.glcf.fusion_dims = {8, 12, 16, 20};
  return cfg;
}

} // namespace

TEST_CASE("volume codec: bit-exact round trips for f32 and u8") {
  Rng rng(71);
  VolumeF vol(6, 5, 4);
  for (auto& v : vol.v) v = static_cast<float>(rng.gaussian());
  const std::string vp = (scratch() / "a.vol").string();
  write_volume(vp, vol);
  VolumeF back = read_volume(vp);
  CHECK(back.dims == vol.dims);
  CHECK(std::memcmp(back.v.data(), vol.v.data(), vol.v.size() * sizeof(float)) == 0);

  MaskU8 mask(4, 6, 8);
  for (auto& v : mask.v) v = rng.coin() ? 1 : 0;
  const std::string mp = (scratch() / "a.mask").string();
  write_mask(mp, mask);
  MaskU8 mback = read_mask(mp);
  CHECK(mback.dims == mask.dims);
  CHECK(mback.v == mask.v);

  // Double round trip is byte-identical on disk.
  const std::string vp2 = (scratch() / "a2.vol").string();
  write_volume(vp2, back);
  CHECK(read_text_file(vp) == read_text_file(vp2));
}

TEST_CASE("volume codec: rejects bad magic, truncation, and dtype mixups") {
  VolumeF vol(4, 4, 4);
  const std::string vp = (scratch() / "b.vol").string();
  write_volume(vp, vol);
  std::string bytes = read_text_file(vp);

  std::string corrupt = bytes;
  corrupt[0] = 'X';
  const std::string cp = (scratch() / "bad_magic.vol").string();
  write_text_file(cp, corrupt);
  CHECK_THROWS_WITH_AS(read_volume(cp), doctest::Contains("bad magic"), std::runtime_error);

  const std::string tp = (scratch() / "trunc.vol").string();
  write_text_file(tp, bytes.substr(0, bytes.size() - 7));
  const std::string want_trunc = "truncated file at byte " + std::to_string(bytes.size() - 7);
  CHECK_THROWS_WITH_AS(read_volume(tp), doctest::Contains(want_trunc.c_str()),
                       std::runtime_error);

  // A mask read as a volume (and vice versa) is a dtype error, not garbage.
  MaskU8 mask(4, 4, 4);
  const std::string mp = (scratch() / "c.mask").string();
  write_mask(mp, mask);
  CHECK_THROWS_WITH_AS(read_volume(mp), doctest::Contains("dtype mismatch"), std::runtime_error);
  CHECK_THROWS_WITH_AS(read_mask(vp), doctest::Contains("dtype mismatch"), std::runtime_error);

  const std::string xp = (scratch() / "trail.vol").string();
  write_text_file(xp, bytes + "zz");
  CHECK_THROWS_WITH_AS(read_volume(xp), doctest::Contains("trailing bytes"), std::runtime_error);
}

TEST_CASE("branch files: full fidelity for a generated tree") {
  PhantomConfig pc;
  pc.seed = 5;
  PhantomSample sample = generate_phantom(pc);
  REQUIRE(sample.tree.branches.size() > 1);
  const std::string bp = (scratch() / "t.branches").string();
  write_branches(bp, sample.tree.branches);
  auto back = read_branches(bp);
  REQUIRE(back.size() == sample.tree.branches.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    const Branch& a = sample.tree.branches[i];
    const Branch& b = back[i];
    CHECK(b.id == a.id);
    CHECK(b.parent_id == a.parent_id);
    CHECK(b.generation == a.generation);
    CHECK(b.radius == a.radius); // shortest-round-trip float formatting
    CHECK(b.centerline == a.centerline);
  }
}

TEST_CASE("branch files: malformed and inconsistent input is rejected") {
  const std::string p = (scratch() / "bad.branches").string();
  write_text_file(p, "0 -1 1 2 3 2.5\n0 -1 nonsense\n");
  CHECK_THROWS_WITH_AS(read_branches(p), doctest::Contains("malformed line 2"),
                       std::runtime_error);
  write_text_file(p, "0 -1 1 2 3 2.5\n0 -1 1 2 4 9.0\n");
  CHECK_THROWS_WITH_AS(read_branches(p), doctest::Contains("inconsistent branch 0"),
                       std::runtime_error);
  write_text_file(p, "1 0 1 2 3 2.5\n");
  CHECK_THROWS_WITH_AS(read_branches(p), doctest::Contains("missing parent"),
                       std::runtime_error);
}

TEST_CASE("config: serialize -> parse -> serialize is a fixed point") {
  RunConfig defaults;
  defaults.seed = 123;
  defaults.seed_set = true;
  const std::string once = serialize_config(defaults);
  RunConfig parsed = parse_config(once);
  const std::string twice = serialize_config(parsed);
  CHECK(once == twice);
  CHECK(parsed.seed == 123);
  CHECK(parsed.optim.epochs == 30);
  CHECK(parsed.backbone.stage_channels == std::array<int, 4>{8, 16, 32, 64});
  CHECK(parsed.glcf.fusion_dims == std::array<int, 4>{32, 64, 128, 256});
  CHECK(config_hash(parsed) == config_hash(defaults));

  // A changed value survives the round trip and changes the hash.
  RunConfig other = parsed;
  other.backbone.identity_gate = true;
  other.backbone.gate_target = GateTarget::sum;
  other.backbone.skip_fusion = SkipFusion::add;
  other.two_stage = true;
  other.optim.lr = 5e-4f;
  RunConfig other_back = parse_config(serialize_config(other));
  CHECK(other_back.backbone.identity_gate);
  CHECK(other_back.backbone.gate_target == GateTarget::sum);
  CHECK(other_back.backbone.skip_fusion == SkipFusion::add);
  CHECK(other_back.two_stage);
  CHECK(other_back.optim.lr == 5e-4f);
  CHECK(config_hash(other) != config_hash(parsed));
}

TEST_CASE("config: unknown keys, malformed lines, and missing seed all throw") {
  CHECK_THROWS_WITH_AS(parse_config("[run]\nseed = 1\nbogus = 2\n"),
                       doctest::Contains("unknown key 'run.bogus'"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("[nowhere]\nx = 1\n"),
                       doctest::Contains("unknown key 'nowhere.x'"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("[run]\nno equals sign\n"),
                       doctest::Contains("expected 'key = value'"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("[run]\nout_dir = x\n"), doctest::Contains("seed"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("[optim]\nlr = fast\n"),
                       doctest::Contains("bad value for 'optim.lr'"), std::runtime_error);
  // Comments and blank lines are fine; seed present means no throw.
  RunConfig c = parse_config("# comment\n\n[run]\nseed = 9\n");
  CHECK(c.seed == 9);
  RunConfig bad = c;
  bad.data.train_ratio = 0.9; // ratios now sum to 1.1
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("ratios"), std::runtime_error);
}

TEST_CASE("checkpoint: load -> save is byte-identical and hash-guarded") {
  RunConfig cfg = tiny_run_config();
  Model model = Model::init(cfg);
  AdamW opt;
  auto params = model.params();
  opt.attach(params);
  // Take one optimizer step so the moments are nonzero.
  for (Tensor* p : params) {
    float* g = p->grad();
    for (std::int64_t j = 0; j < p->numel(); ++j) g[j] = 0.01f * static_cast<float>(j % 7 - 3);
  }
  opt.step();

  const std::uint64_t h = config_hash(cfg);
  const std::string p1 = (scratch() / "ck1.bin").string();
  write_checkpoint(p1, make_checkpoint(model, opt, h, 3));

  Checkpoint ck = read_checkpoint(p1);
  CHECK(ck.epoch == 3);
  CHECK(ck.step == 1);
  CHECK(ck.config_hash == h);
  CHECK(ck.arrays.size() == 3 * params.size());
  const std::string p2 = (scratch() / "ck2.bin").string();
  write_checkpoint(p2, ck);
  CHECK(read_text_file(p1) == read_text_file(p2));

  // Wrong hash is refused unless forced.
  CHECK_THROWS_WITH_AS(read_checkpoint_for(p1, h + 1), doctest::Contains("config hash mismatch"),
                       std::runtime_error);
  CHECK_NOTHROW(read_checkpoint_for(p1, h + 1, /*force=*/true));

  // Applying onto a fresh model restores every parameter and moment exactly.
  Model model2 = Model::init(tiny_run_config());
  for (Tensor* p : model2.params())
    for (auto& v : p->vec()) v += 0.5f; // knock it away from the saved state
  AdamW opt2;
  auto params2 = model2.params();
  opt2.attach(params2);
  apply_checkpoint(ck, model2, opt2);
  CHECK(opt2.step_count() == 1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params2[i]->vec() == params[i]->vec());
    CHECK(opt2.moment1(i) == opt.moment1(i));
    CHECK(opt2.moment2(i) == opt.moment2(i));
  }

  // Truncation reporting works for checkpoints too.
  std::string bytes = read_text_file(p1);
  const std::string p3 = (scratch() / "ck3.bin").string();
  write_text_file(p3, bytes.substr(0, 40));
  CHECK_THROWS_WITH_AS(read_checkpoint(p3), doctest::Contains("truncated"), std::runtime_error);
  bytes[0] = 'Q';
  write_text_file(p3, bytes);
  CHECK_THROWS_WITH_AS(read_checkpoint(p3), doctest::Contains("bad magic"), std::runtime_error);
}

TEST_CASE("dataset generation: deterministic files, manifest, and split") {
  RunConfig cfg = tiny_run_config();
  cfg.data.count = 5;
  cfg.data.train_ratio = 0.6;
  cfg.data.val_ratio = 0.2;
  cfg.data.test_ratio = 0.2;
  cfg.phantom.grid = {16, 16, 16};
  cfg.phantom.depth = 1;
  cfg.phantom.trunk_radius = 1.5f;
  cfg.phantom.seg_len_lo = 8.0f;
  cfg.phantom.seg_len_hi = 10.0f;
  const fs::path d1 = scratch() / "data1";
  const fs::path d2 = scratch() / "data2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  cfg.data_dir = d1.string();
  CHECK(generate_dataset(cfg) == 5);
  cfg.data_dir = d2.string();
  CHECK(generate_dataset(cfg) == 5);

  for (const char* f : {"manifest.txt", "split.txt", "case_000.vol", "case_000.mask",
                        "case_000.branches", "case_004.vol"})
    CHECK(read_text_file((d1 / f).string()) == read_text_file((d2 / f).string()));

  Dataset ds = load_dataset(d1.string());
  CHECK(ds.cases.size() == 5);
  CHECK(ds.dims == std::array<int, 3>{16, 16, 16});
  CHECK(ds.train.size() == 3);
  CHECK(ds.val.size() == 1);
  CHECK(ds.test.size() == 1);
  for (const CaseData& c : ds.cases) {
    CHECK(c.volume.dims == std::array<int, 3>{16, 16, 16});
    CHECK(c.mask.dims == c.volume.dims);
    CHECK(!c.branches.empty());
    std::int64_t fg = 0;
    for (auto v : c.mask.v) fg += v;
    CHECK(fg > 0);
  }

  // n = 0: manifest only, and that is not an error.
  RunConfig empty_cfg = cfg;
  empty_cfg.data.count = 0;
  const fs::path d0 = scratch() / "data0";
  fs::remove_all(d0);
  empty_cfg.data_dir = d0.string();
  CHECK(generate_dataset(empty_cfg) == 0);
  CHECK(fs::exists(d0 / "manifest.txt"));
  CHECK(!fs::exists(d0 / "split.txt"));
  Dataset empty = load_dataset(d0.string());
  CHECK(empty.cases.empty());
}
