// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. Criteria 7-9 train the desk model twice, so
// expect roughly half an hour on one core.
//
//   acceptance [work_dir]

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <sys/resource.h>
#include <sys/wait.h>

#include "neurogir/neurogir.hpp"

using namespace neurogir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

struct Proc {
  int code = -1;
  std::string output;
  double wall_s = 0.0;
  double cpu_s = 0.0;  // user + system time of the child
};

double children_cpu() {
  rusage ru{};
  getrusage(RUSAGE_CHILDREN, &ru);
  return double(ru.ru_utime.tv_sec + ru.ru_stime.tv_sec) + 1e-6 * double(ru.ru_utime.tv_usec + ru.ru_stime.tv_usec);
}

Proc cli(const std::string& args) {
  Proc p;
  const std::string cmd = std::string(NEUROGIR_CLI) + " " + args + " 2>&1";
  const double cpu0 = children_cpu();
  const auto t0 = std::chrono::steady_clock::now();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return p;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) p.output.append(buf, n);
  const int status = pclose(pipe);
  p.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  p.cpu_s = children_cpu() - cpu0;
  p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return p;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void report(int id, const Outcome& o, int& failures) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail.str() << std::endl;
  failures += !o.pass;
}

Outcome gradient_suite() {
  Outcome o;
  const Proc p = cli("gradcheck --all");
  o.require(p.code == 0, "exit code " + std::to_string(p.code));
  o.require(p.wall_s < 120.0, "runtime under 2 min");
  for (const char* op : {"conv3d", "unit_conv", "pool3d_max", "pool3d_min", "relu", "sigmoid", "batchnorm3d",
                         "matmul", "upsample_transposed", "upsample_nearest", "gir_forward", "soft_skeleton",
                         "skeleton_loss", "bce", "compound_loss"}) {
    const std::string line = "PASS " + std::string(op) + " ";
    const auto at = p.output.find(line);
    o.require(at != std::string::npos, std::string(op) + " passed");
    if (at != std::string::npos) {
      const auto end = p.output.find('\n', at);
      o.require(p.output.substr(at, end - at).find("shapes=5") != std::string::npos, std::string(op) + " on 5 shapes");
    }
  }
  o.detail << "gradcheck --all exit " << p.code << " in " << std::fixed << std::setprecision(1) << p.wall_s << " s";
  return o;
}

Outcome schedule() {
  Outcome o;
  o.require(alpha(0.0) == 0.0, "alpha(0) == 0");
  double worst = 0.0;
  for (int k = 0; k <= 40; ++k) worst = std::max(worst, std::abs(alpha(0.05 * k) - std::tanh(0.25 * k)));
  o.require(worst <= 1e-12, "alpha == tanh(5p)");
  o.require(std::abs(alpha(1.0) - 0.9999092) <= 1e-6, "alpha(1)");
  const std::size_t per_epoch = 4;
  const double p = progress_ratio({250 * per_epoch, 300 * per_epoch, 300}, LossConfig{});
  o.require(std::abs(p - 5.0 / 3.0) < 1e-12, "p at epoch 250 of 300");
  o.detail << "max |alpha - tanh(5p)| = " << worst << ", alpha(1) = " << std::setprecision(8) << alpha(1.0)
           << ", p(250/300) = " << p;
  return o;
}

Outcome skeleton() {
  Outcome o;
  auto grid = [](std::size_t n) { return Tensor<double>::zeros({1, 1, n, n, n}); };
  auto s = grid(7);
  for (std::size_t i : {10u, 50u, 171u, 300u}) s.values()[i] = 1.0;
  const double same = skeleton_loss_from_skeletons(s, s, 1.0).item();
  o.require(std::abs(same) <= 1e-9, "identical skeletons");
  auto nine = grid(7);
  for (std::size_t i = 0; i < 9; ++i) nine.values()[i * 11] = 1.0;
  const double empty = skeleton_loss_from_skeletons(grid(7), nine, 1.0).item();
  o.require(std::abs(empty - 0.8182) <= 1e-4, "empty vs 9 voxels");
  auto line = grid(7);
  for (std::size_t x = 1; x < 6; ++x) line.values()[(3 * 7 + 3) * 7 + x] = 1.0;
  o.require(soft_skeleton(line, 5).values() == line.values(), "line preserved");
  auto cube = grid(9);
  for (std::size_t z = 2; z < 7; ++z)
    for (std::size_t y = 2; y < 7; ++y)
      for (std::size_t x = 2; x < 7; ++x) cube.values()[(z * 9 + y) * 9 + x] = 1.0;
  double mass = 0.0;
  for (double v : soft_skeleton(cube, 5).values()) mass += v;
  o.require(mass < 125.0, "cube thinned");
  o.detail << "L(same) = " << same << ", L(empty, 9) = " << std::setprecision(6) << empty << ", cube mass "
           << mass << "/125";
  return o;
}

Outcome params(const fs::path& work) {
  Outcome o;
  std::ofstream(work / "default_config.json") << "{}\n";
  const Proc p = cli("params --config " + q(work / "default_config.json"));
  o.require(p.code == 0, "params exit code");
  std::istringstream in(p.output);
  std::string key, pct;
  std::size_t without = 0, with = 0, overhead = 0;
  in >> key >> without >> key >> with >> key >> overhead >> pct;
  o.require(without >= 1190000 && without <= 1610000, "backbone within 15% of 1.40M");
  o.require(overhead == 26080 && with - without == 26080, "overhead == 26,080");
  const double ratio = double(with) / double(without) - 1.0;
  o.require(ratio >= 0.01 && ratio <= 0.05, "overhead in [1%, 5%]");
  o.require(!pct.empty(), "percentage printed");
  o.detail << without << " without GIR, " << with << " with, +" << overhead << " " << pct;
  return o;
}

Outcome metrics() {
  Outcome o;
  const double f = f1_score(0.3371, 0.5358);
  o.require(std::abs(f - 0.4138) <= 5e-4, "f1(0.3371, 0.5358)");
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Volume prob = Volume::zeros_f32({8, 8, 8});
    Volume label = Volume::zeros_u8({8, 8, 8});
    for (std::size_t i = 0; i < prob.size(); ++i) {
      prob.f32()[i] = u(rng);
      label.u8()[i] = u(rng) < 0.3f;
    }
    for (const auto& r : threshold_sweep(prob, label).records) {
      std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < prob.size(); ++i) {
        const bool pred = double(prob.f32()[i]) >= r.threshold;
        (pred ? (label.u8()[i] ? tp : fp) : (label.u8()[i] ? fn : tn))++;
      }
      mismatches += r.tp != tp || r.fp != fp || r.fn != fn || r.tn != tn;
    }
  }
  o.require(mismatches == 0, "sweep counts == brute force");
  o.detail << "f1 = " << std::setprecision(6) << f << ", " << mismatches << " count mismatches over 20 seeds";
  return o;
}

Outcome gir_contracts() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> extent(1, 6), quarter(1, 8), batch(1, 3);
  std::size_t shapes = 0;
  while (shapes < 10) {
    const std::size_t c = 4 * quarter(rng);
    const Shape shape{batch(rng), c, extent(rng), extent(rng), extent(rng)};
    if (shape[0] * shape[2] * shape[3] * shape[4] < 2) continue;
    ParameterStore<double> store;
    auto block = GirBlock<double>::create(GirConfig::defaults(c), store);
    block.initialize(rng);
    o.require(gir_forward(random_tensor(shape, rng), block, Mode::train).shape() == shape, "shape preserved");
    ++shapes;
  }
  ParameterStore<double> store;
  auto zero = GirBlock<double>::create(GirConfig::defaults(16), store);
  const auto x = random_tensor({2, 16, 3, 4, 5}, rng);
  o.require(gir_forward(x, zero, Mode::train).values() == x.values(), "zero block identity");
  const auto f = random_tensor({9, 7}, rng);
  const auto agg = aggregate(f, Tensor<double>::zeros({9, 9}));
  bool relu_exact = true;
  for (std::size_t i = 0; i < f.size(); ++i) relu_exact &= agg.values()[i] == std::max(0.0, f.values()[i]);
  o.require(relu_exact, "aggregate(F, 0) == relu(F)");
  o.detail << shapes << " random shapes preserved, zero block exact, aggregate(F, 0) exact";
  return o;
}

double baseline_mean_f1(const fs::path& dir) {
  double total = 0.0;
  const auto paths = list_samples(dir);
  for (const auto& p : paths) {
    const Sample s = load_sample(p);
    total += simple_threshold_baseline(s.image, s.label).best.f1;
  }
  return total / double(paths.size());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = fs::absolute(argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work"));
  fs::remove_all(work);
  fs::create_directories(work);
  int failures = 0;

  report(1, gradient_suite(), failures);
  report(2, schedule(), failures);
  report(3, skeleton(), failures);
  report(4, params(work), failures);
  report(5, metrics(), failures);
  report(6, gir_contracts(), failures);

  // Desk-scale data and two identical training runs.
  Outcome desk, determinism, persistence;
  const fs::path samples = NEUROGIR_SAMPLES;
  const Proc synth_train = cli("synth --spec " + q(samples / "phantom_48.json") + " --count 20 --out " +
                               q(work / "desk/train"));
  const Proc synth_val = cli("synth --spec " + q(samples / "phantom_48_val.json") + " --count 4 --out " +
                             q(work / "desk/val"));
  desk.require(synth_train.code == 0 && synth_val.code == 0, "phantom synthesis");

  auto config = nlohmann::json::parse(slurp(samples / "desk_run.json"));
  config["data"]["train_dir"] = (work / "desk/train").string();
  config["data"]["val_dir"] = (work / "desk/val").string();
  std::ofstream(work / "desk_run.json") << config.dump(2) << '\n';
  const auto& model_cfg = config.at("model");
  desk.require(model_cfg.at("level_channels") == nlohmann::json::array({8, 16, 32}) &&
                   model_cfg.at("bottleneck_channels") == 64 && model_cfg.at("gir") == true &&
                   config.at("loss").at("mode") == "compound",
               "reduced model config");

  Proc runs[2];
  for (int r = 0; r < 2; ++r) {
    runs[r] = cli("train --config " + q(work / "desk_run.json") + " --out " + q(work / ("run" + std::to_string(r))));
    std::cout << "  run " << r << ": " << runs[r].output << std::flush;
  }
  double best = -1.0;
  nlohmann::json manifest;
  if (runs[0].code == 0) {
    manifest = nlohmann::json::parse(slurp(work / "run0/checkpoint/manifest.json"));
    best = manifest.at("best_val_f1").get<double>();
  }
  const double baseline = baseline_mean_f1(work / "desk/val");
  desk.require(runs[0].code == 0, "training exit code");
  desk.require(best >= 0.80, "best validation F1 >= 0.80");
  desk.require(runs[0].cpu_s < 30.0 * 60.0, "under 30 CPU-minutes");
  desk.require(baseline < best, "baseline strictly lower");
  desk.detail << "best val F1 " << std::setprecision(4) << best << " vs simple threshold " << baseline << ", "
              << std::setprecision(1) << std::fixed << runs[0].cpu_s / 60.0 << " CPU-min";
  report(7, desk, failures);

  const std::string h0 = slurp(work / "run0/history.jsonl"), h1 = slurp(work / "run1/history.jsonl");
  determinism.require(runs[1].code == 0, "second run exit code");
  determinism.require(!h0.empty() && h0 == h1, "history files identical");
  determinism.detail << "history " << h0.size() << " bytes, identical: " << (h0 == h1 ? "yes" : "no");
  report(8, determinism, failures);

  // Persistence: volumes, checkpoint re-save, and a fresh-process evaluation.
  {
    std::mt19937_64 rng(77);
    Volume f = Volume::zeros_f32({5, 6, 7});
    for (auto& v : f.f32()) v = std::bit_cast<float>(std::uint32_t(rng()) & 0x7f7fffffu);
    Volume b = Volume::zeros_u8({5, 6, 7});
    for (auto& v : b.u8()) v = std::uint8_t(rng());
    save_volume(f, work / "vol_f32");
    save_volume(b, work / "vol_u8");
    const Volume f2 = load_volume(work / "vol_f32"), b2 = load_volume(work / "vol_u8");
    persistence.require(std::memcmp(f2.f32().data(), f.f32().data(), f.size() * sizeof(float)) == 0 &&
                            b2.u8() == b.u8(),
                        "volume round trip");
    if (runs[0].code == 0) {
      const Checkpoint ck = load_checkpoint(work / "run0/checkpoint");
      Model<float> model(model_config_from_json(ck.manifest.at("model")));
      apply_checkpoint(ck, model.store());
      save_checkpoint(work / "resaved", model.store(), ck.manifest);
      persistence.require(slurp(work / "resaved/weights.bin") == slurp(work / "run0/checkpoint/weights.bin"),
                          "checkpoint round trip");
    }
    const Proc eval = cli("eval --checkpoint " + q(work / "run0/checkpoint") + " --data " + q(work / "desk/val") +
                          " --report " + q(work / "eval.json"));
    persistence.require(eval.code == 0, "eval exit code");
    double reproduced = -2.0;
    if (eval.code == 0) reproduced = nlohmann::json::parse(slurp(work / "eval.json")).at("mean_best_f1").get<double>();
    persistence.require(std::abs(reproduced - best) <= 1e-6, "eval reproduces validation F1");
    persistence.detail << "bit-exact volumes and checkpoint; eval F1 " << std::setprecision(10) << reproduced
                       << " vs training " << best;
  }
  report(9, persistence, failures);

  std::cout << (failures ? "acceptance FAILED (" + std::to_string(failures) + " criteria)" : "acceptance passed")
            << std::endl;
  return failures ? 1 : 0;
}
