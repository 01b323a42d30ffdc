#pragma once

// Command implementations behind the neurogir executable. Each returns a
// process exit code: 0 success, 1 failure, 2 bad config or missing input,
// 3 training aborted on a non-finite value.

#include <algorithm>
#include <cmath>
#include <memory>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurogir/checkpoint.hpp"
#include "neurogir/config.hpp"
#include "neurogir/gradcheck_suite.hpp"
#include "neurogir/metrics.hpp"
#include "neurogir/phantom.hpp"
#include "neurogir/trainer.hpp"

namespace neurogir {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_input = 2, exit_nonfinite = 3 };

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

inline std::vector<Sample> load_dataset(const std::string& dir, double gaussian_sigma) {
  if (dir.empty()) throw ConfigError("dataset directory not set");
  std::vector<Sample> out;
  for (const auto& p : list_samples(dir)) out.push_back(prepare_sample(load_sample(p), gaussian_sigma));
  if (out.empty()) throw FormatError("no samples found in " + dir);
  return out;
}

/// Runs `body`, translating exceptions into exit codes and a message on `err`.
template <typename Fn>
int guarded(std::ostream& err, Fn body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_input;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const TrainingDiverged& e) {
    err << e.what() << '\n';
    return exit_nonfinite;
  } catch (const NonFiniteError& e) {
    err << "non-finite value: " << e.what() << '\n';
    return exit_nonfinite;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_failure;
  }
}

struct Summary {
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation, 0 for a single value
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(ss / double(v.size() - 1));
  }
  return s;
}

struct Loaded {
  std::unique_ptr<Model<float>> model;
  nlohmann::json manifest;
  double gaussian_sigma = 0.0;
  Dims patch{};
  double overlap = 0.5;
};

inline Loaded load_model(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  Loaded out;
  out.manifest = ck.manifest;
  try {
    out.model = std::make_unique<Model<float>>(model_config_from_json(ck.manifest.at("model")));
    const auto& data = ck.manifest.at("data");
    out.gaussian_sigma = data.at("gaussian_sigma").get<double>();
    out.patch = data.at("patch").get<Dims>();
    out.overlap = data.at("overlap").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest lacks model or data settings: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model config: ") + e.what());
  }
  apply_checkpoint(ck, out.model->store());
  return out;
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

inline int cmd_train(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                     std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const RunConfig cfg = load_run_config(config_path);
    const auto train_set = detail::load_dataset(cfg.data.train_dir, cfg.data.gaussian_sigma);
    const auto val_set = detail::load_dataset(cfg.data.val_dir, cfg.data.gaussian_sigma);
    std::filesystem::create_directories(out_dir);
    detail::write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

    Model<float> model(cfg.model);
    model.initialize(cfg.seed);
    std::ofstream history(out_dir / "history.jsonl", std::ios::binary);
    if (!history) throw FormatError("cannot write " + (out_dir / "history.jsonl").string());
    const TrainResult result = train(model, train_set, val_set, cfg.train, cfg.loss, cfg.data, &history);

    const nlohmann::json run = to_json(cfg);
    nlohmann::json extra{{"model", run.at("model")},
                         {"data",
                          {{"gaussian_sigma", cfg.data.gaussian_sigma},
                           {"patch", cfg.data.patch},
                           {"overlap", cfg.data.overlap}}},
                         {"best_val_f1", result.best_val_f1},
                         {"best_iteration", result.best_iteration},
                         {"iterations", result.iterations}};
    save_checkpoint(out_dir / "checkpoint", model.store(), extra);
    out << "trained " << result.iterations << " iterations" << (result.stopped_early ? " (early stop)" : "")
        << "; best val F1 " << std::setprecision(10) << result.best_val_f1 << " at iteration "
        << result.best_iteration << '\n';
    return int(exit_ok);
  });
}

/// Per-volume best-threshold metrics for the model and the intensity
/// threshold baseline; JSON report at `report`, aligned table beside it (.txt).
inline int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const std::filesystem::path& report, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    detail::Loaded loaded = detail::load_model(checkpoint);
    const auto paths = list_samples(data_dir);
    if (paths.empty()) throw FormatError("no samples found in " + data_dir.string());
    struct Row {
      std::string method;
      std::size_t params = 0;
      std::vector<MetricsRecord> per_image;
    };
    Row model_row{"Proposed", count_params(*loaded.model), {}};
    Row simple_row{"Simple", 0, {}};
    std::vector<std::string> names;
    for (const auto& p : paths) {
      const Sample raw = load_sample(p);
      const Sample prepared = prepare_sample(raw, loaded.gaussian_sigma);
      const Volume prob = sliding_window_predict(*loaded.model, prepared.image, loaded.patch, loaded.overlap);
      model_row.per_image.push_back(threshold_sweep(prob, prepared.label).best);
      simple_row.per_image.push_back(simple_threshold_baseline(raw.image, raw.label).best);
      names.push_back(p.filename().string());
    }

    nlohmann::json j{{"images", names}, {"methods", nlohmann::json::array()}};
    std::ostringstream table;
    table << std::left << std::setw(10) << "Method" << std::right << std::setw(10) << "#Params";
    for (const auto& n : names) table << "  " << std::setw(26) << (n + " P/R/F1");
    table << "  " << std::setw(44) << "Overall P/R/F1 (mean +- std)" << '\n';
    for (const Row* row : {&model_row, &simple_row}) {
      nlohmann::json m{{"method", row->method}, {"params", row->params}, {"per_image", nlohmann::json::array()}};
      std::vector<double> ps, rs, fs;
      table << std::left << std::setw(10) << row->method << std::right << std::setw(10)
            << (row->params ? detail::fixed(double(row->params) / 1e6, 3) + "M" : std::string("-"));
      for (std::size_t i = 0; i < row->per_image.size(); ++i) {
        const auto& r = row->per_image[i];
        m["per_image"].push_back({{"image", names[i]},
                                  {"threshold", r.threshold},
                                  {"precision", r.precision},
                                  {"recall", r.recall},
                                  {"f1", r.f1},
                                  {"tp", r.tp},
                                  {"fp", r.fp},
                                  {"fn", r.fn}});
        ps.push_back(r.precision);
        rs.push_back(r.recall);
        fs.push_back(r.f1);
        table << "  " << std::setw(26)
              << (detail::fixed(r.precision) + "/" + detail::fixed(r.recall) + "/" + detail::fixed(r.f1));
      }
      const auto sp = detail::summarize(ps), sr = detail::summarize(rs), sf = detail::summarize(fs);
      m["overall"] = {{"precision", {{"mean", sp.mean}, {"std", sp.stdev}}},
                      {"recall", {{"mean", sr.mean}, {"std", sr.stdev}}},
                      {"f1", {{"mean", sf.mean}, {"std", sf.stdev}}}};
      table << "  " << std::setw(44)
            << (detail::fixed(sp.mean) + "+-" + detail::fixed(sp.stdev) + " " + detail::fixed(sr.mean) + "+-" +
                detail::fixed(sr.stdev) + " " + detail::fixed(sf.mean) + "+-" + detail::fixed(sf.stdev))
            << '\n';
      j["methods"].push_back(m);
    }
    j["mean_best_f1"] = j["methods"][0]["overall"]["f1"]["mean"];
    detail::write_text(report, j.dump(2) + "\n");
    std::filesystem::path txt = report;
    txt.replace_extension(".txt");
    detail::write_text(txt, table.str());
    out << table.str();
    return int(exit_ok);
  });
}

inline int cmd_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& volume,
                       const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    detail::Loaded loaded = detail::load_model(checkpoint);
    Volume image = normalize_image(load_volume(volume));
    if (loaded.gaussian_sigma > 0.0) image = gaussian3d(image, loaded.gaussian_sigma);
    Volume prob = sliding_window_predict(*loaded.model, image, loaded.patch, loaded.overlap);
    prob.meta = {{"source", "prediction"}};
    save_volume(prob, out_dir);
    out << "wrote probability volume " << out_dir.string() << '\n';
    return int(exit_ok);
  });
}

/// `op` empty runs every case; otherwise only the named one.
inline int cmd_gradcheck(const std::string& op, double tol, std::ostream& out, std::ostream& err,
                         const std::vector<GradcheckCase>& cases = default_gradcheck_cases()) {
  return detail::guarded(err, [&] {
    std::vector<GradcheckCase> selected;
    for (const auto& c : cases)
      if (op.empty() || c.name == op) selected.push_back(c);
    if (selected.empty()) {
      std::string known;
      for (const auto& c : cases) known += (known.empty() ? "" : ", ") + c.name;
      throw ConfigError("unknown gradcheck op '" + op + "' (known: " + known + ")");
    }
    GradcheckOptions opts;
    opts.tolerance = tol;
    const auto results = run_gradcheck_suite(selected, opts, 5, &out);
    std::size_t failed = 0;
    for (const auto& r : results) failed += !r.passed;
    out << (failed ? "gradcheck FAILED for " + std::to_string(failed) + " op(s)" : std::string("gradcheck passed"))
        << '\n';
    return failed ? int(exit_failure) : int(exit_ok);
  });
}

/// Sample k of the dataset uses seed spec.seed + k, saved as <out>/sample_NNN.
inline int cmd_synth(const std::filesystem::path& spec_path, std::size_t count, const std::filesystem::path& out_dir,
                     std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    if (!std::filesystem::exists(spec_path)) throw FormatError("phantom spec not found: " + spec_path.string());
    PhantomSpec spec;
    try {
      spec = nlohmann::json::parse(detail::read_file(spec_path)).get<PhantomSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad phantom spec: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (std::size_t k = 0; k < count; ++k) {
      PhantomSpec s = spec;
      s.seed = spec.seed + k;
      std::ostringstream name;
      name << "sample_" << std::setw(3) << std::setfill('0') << k;
      Sample sample = synth_phantom(s);
      save_sample(sample, out_dir / name.str());
    }
    out << "wrote " << count << " phantoms to " << out_dir.string() << '\n';
    return int(exit_ok);
  });
}

inline int cmd_project(const std::filesystem::path& volume, const std::string& axis, const std::filesystem::path& pgm,
                       std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    Axis a;
    try {
      a = parse_axis(axis);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    Volume v = load_volume(volume);
    // Binary u8 labels project as they are; other u8 data is scaled by 1/255.
    if (v.dtype() == DType::u8 && std::any_of(v.u8().begin(), v.u8().end(), [](auto b) { return b > 1; })) {
      v = normalize_image(v);
    }
    write_pgm(max_projection(v, a), pgm);
    out << "wrote " << pgm.string() << '\n';
    return int(exit_ok);
  });
}

inline int cmd_params(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    RunConfig cfg = load_run_config(config_path);
    UNetConfig with = cfg.model, without = cfg.model;
    with.gir_enabled = true;
    without.gir_enabled = false;
    const std::size_t n_with = count_params(Model<float>(with));
    const std::size_t n_without = count_params(Model<float>(without));
    const double overhead = 100.0 * double(n_with - n_without) / double(n_without);
    out << "params_without_gir " << n_without << '\n'
        << "params_with_gir " << n_with << '\n'
        << "gir_overhead " << (n_with - n_without) << " (" << std::fixed << std::setprecision(2) << overhead
        << "%)\n";
    return int(exit_ok);
  });
}

}  // namespace neurogir
