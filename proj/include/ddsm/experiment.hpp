#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ddsm/cnn.hpp"
#include "ddsm/config.hpp"
#include "ddsm/dsm.hpp"
#include "ddsm/fnn.hpp"
#include "ddsm/io.hpp"
#include "ddsm/metrics.hpp"
#include "ddsm/pipeline.hpp"
#include "ddsm/render.hpp"

namespace ddsm {

using Logger = std::function<void(const std::string&)>;

// "EITI" blob: magic, u32 version, u32 n1, u32 n2, f64 lo1 hi1 lo2 hi2, array [n2, n1].
inline std::string encode_index_field(const IndexField& f) {
  ByteWriter w;
  w.raw("EITI");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(f.grid.n1));
  w.u32(static_cast<std::uint32_t>(f.grid.n2));
  for (double v : {f.grid.lo1, f.grid.hi1, f.grid.lo2, f.grid.hi2}) w.f64(v);
  w.array({f.grid.n2, f.grid.n1}, f.values.data());
  return w.bytes();
}

inline IndexField decode_index_field(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != "EITI") throw IoError("not an index field (bad magic)");
  if (r.u32() != 1) throw IoError("unsupported index field version");
  CartesianGrid g;
  g.n1 = r.u32();
  g.n2 = r.u32();
  g.lo1 = r.f64();
  g.hi1 = r.f64();
  g.lo2 = r.f64();
  g.hi2 = r.f64();
  std::vector<std::uint64_t> dims;
  IndexField f(g);
  f.values = r.array(dims);
  if (dims.size() != 2 || dims[0] != g.n2 || dims[1] != g.n1) throw IoError("index field shape mismatch");
  if (!r.done()) throw IoError("trailing bytes after index field");
  return f;
}

// Reruns `fn`, prefixing any failure with the stage name while keeping its exit class.
template <class F>
auto in_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("stage " + stage + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage " + stage + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("stage " + stage + ": " + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError("stage " + stage + ": " + e.what());
  }
}

inline std::string noise_tag(double delta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "d%03d", static_cast<int>(std::lround(delta * 100.0)));
  return buf;
}

inline std::string loss_trace_text(const std::vector<double>& loss) {
  std::string s;
  char buf[48];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu %.17g\n", i, loss[i]);
    s += buf;
  }
  return s;
}

// Test-time noise for record r at level delta uses its own stream.
inline NoiseSpec test_noise(const DatasetSpec& test, std::uint64_t index, double delta) {
  NoiseSpec n;
  n.delta = delta;
  n.seed = derive_seed(test.seed, index, 3);
  return n;
}

inline std::vector<TrainingRecord> noisy_copies(const RecordBuilder& builder, const CauchyDataset& test, double delta) {
  std::vector<TrainingRecord> out;
  out.reserve(test.records.size());
  for (const auto& r : test.records)
    out.push_back(delta > 0.0 ? builder.with_noise(r, test_noise(test.spec, r.index, delta)) : r);
  return out;
}

struct TrainedModels {
  std::map<int, FnnModel> fnn;
  std::map<int, CnnModel> cnn;
};

struct ExperimentRow {
  std::string model;  // fnn, cnn or dsm
  int patterns = 0;
  double noise = 0.0;
  EvalReport report;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ExperimentRow> rows;
  std::map<std::string, std::string> digests;  // artifact -> FNV-1a digest
  std::vector<std::string> outputs;            // every file written, relative to output_dir
  std::string digest;

  const ExperimentRow& row(const std::string& model, int patterns, double noise) const {
    for (const auto& r : rows)
      if (r.model == model && r.patterns == patterns && std::abs(r.noise - noise) < 1e-12) return r;
    throw ConfigError("no report row for " + model + " N=" + std::to_string(patterns));
  }
};

inline Json report_json(const ExperimentResult& res) {
  Json rows = Json::array();
  for (const auto& r : res.rows) {
    Json samples = Json::array();
    for (const auto& s : r.report.rows)
      samples.push_back({{"sample", s.sample}, {"iou", s.iou}, {"dice", s.dice}, {"accuracy", s.accuracy}, {"mse", s.mse}});
    rows.push_back({{"model", r.model},
                    {"patterns", r.patterns},
                    {"noise", r.noise},
                    {"mean_iou", r.report.iou().mean},
                    {"std_iou", r.report.iou().stddev},
                    {"mean_dice", r.report.dice().mean},
                    {"mean_accuracy", r.report.accuracy().mean},
                    {"mean_mse", r.report.mse().mean},
                    {"digest", r.report.digest()},
                    {"samples", samples}});
  }
  return Json{{"config_digest", config_digest(res.config)},
              {"rows", rows},
              {"artifacts", res.digests},
              {"outputs", res.outputs},
              {"digest", res.digest}};
}

inline std::string report_table(const ExperimentResult& res) {
  std::string s = "model  N   noise  IoU(mean)  IoU(std)  Dice    Acc     MSE\n";
  char buf[160];
  for (const auto& r : res.rows) {
    std::snprintf(buf, sizeof buf, "%-5s %3d  %5.2f  %9.4f  %8.4f  %6.4f  %6.4f  %7.5f\n", r.model.c_str(), r.patterns,
                  r.noise, r.report.iou().mean, r.report.iou().stddev, r.report.dice().mean, r.report.accuracy().mean,
                  r.report.mse().mean);
    s += buf;
  }
  s += "digest " + res.digest + "\n";
  return s;
}

// dataset -> train -> predict -> eval, writing everything under cfg.output_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Logger& log = {}) {
  namespace fs = std::filesystem;
  cfg.validate_run();
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  const fs::path out(cfg.output_dir);
  ExperimentResult res;
  res.config = cfg;
  auto emit = [&](const std::string& rel, std::string_view bytes) {
    fs::create_directories((out / rel).parent_path());
    write_file((out / rel).string(), bytes);
    res.outputs.push_back(rel);
  };
  in_stage("setup", [&] {
    fs::create_directories(out / "render");
    emit("config.resolved.json", resolved_text(cfg));
  });
  res.digests["config"] = config_digest(cfg);

  const DatasetSpec train_spec = cfg.train_spec(), test_spec = cfg.test_spec();
  CauchyDataset train, test;
  in_stage("gen-data", [&] {
    say("generating " + std::to_string(train_spec.count) + " training records");
    train = generate_records(train_spec);
    res.digests["data/train"] = write_dataset(train, out / "data" / "train").get("digest");
    say("generating " + std::to_string(test_spec.count) + " test records");
    test = generate_records(test_spec);
    res.digests["data/test"] = write_dataset(test, out / "data" / "test").get("digest");
    res.outputs.push_back("data/train");
    res.outputs.push_back("data/test");
  });

  TrainedModels models;
  for (const auto& model : cfg.eval.models)
    for (int n : cfg.eval.patterns) {
      const std::string name = model + "_N" + std::to_string(n);
      in_stage("train " + name, [&] {
        const CauchyDataset view = first_patterns(train, n);
        const auto recs = record_pointers(view.records);
        const auto t0 = std::chrono::steady_clock::now();
        auto progress = [&](std::size_t it, double loss) {
          if ((it + 1) % 1000 == 0) {
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char buf[128];
            std::snprintf(buf, sizeof buf, "%s iteration %zu loss %.5f (%.0f s)", name.c_str(), it + 1, loss, s);
            say(buf);
          }
          return true;
        };
        std::string ckpt;
        TrainResult tr;
        const std::uint64_t stream = model == "fnn" ? 10 : 20;
        if (model == "fnn") {
          FnnConfig c = cfg.fnn;
          c.patterns = n;
          FnnModel m(c, derive_seed(cfg.seed, static_cast<std::uint64_t>(n), stream));
          tr = train_fnn(m, recs, derive_seed(cfg.seed, static_cast<std::uint64_t>(n), stream + 1), progress);
          ckpt = m.params().serialize();
          models.fnn.emplace(n, std::move(m));
        } else {
          CnnConfig c = cfg.cnn;
          c.patterns = n;
          CnnModel m(c, derive_seed(cfg.seed, static_cast<std::uint64_t>(n), stream));
          tr = train_cnn(m, recs, derive_seed(cfg.seed, static_cast<std::uint64_t>(n), stream + 1), progress);
          ckpt = m.params().serialize();
          models.cnn.emplace(n, std::move(m));
        }
        emit("models/" + name + ".eitp", ckpt);
        emit("models/" + name + ".loss.txt", loss_trace_text(tr.loss));
        res.digests["models/" + name] = fnv1a_hex(ckpt);
        say(name + " trained, final loss " + std::to_string(tr.loss.empty() ? 0.0 : tr.loss.back()));
      });
    }

  const RecordBuilder builder(test_spec.grid, test_spec.solver);
  std::unique_ptr<ProbingSource> probe;
  for (double delta : cfg.eval.noise) {
    const std::string tag = noise_tag(delta);
    const auto noisy = in_stage("noise " + tag, [&] { return noisy_copies(builder, test, delta); });
    auto evaluate = [&](const std::string& model, int n, const std::function<IndexField(const TrainingRecord&)>& predict) {
      const std::string name = model + "_N" + std::to_string(n) + "_" + tag;
      ExperimentRow row{model, n, delta, {name, {}, res.digests["config"]}};
      Fnv1a pred_digest;
      for (std::size_t i = 0; i < noisy.size(); ++i) {
        const auto& r = noisy[i];
        const IndexField f = in_stage("predict " + name + " sample " + std::to_string(r.index), [&] { return predict(r); });
        const std::string blob = encode_index_field(f);
        pred_digest.update(blob);
        in_stage("write " + name, [&] {
          emit("predictions/" + name + "/" + record_file_name(r.index).replace(record_file_name(r.index).size() - 4, 4, "eiti"), blob);
          if (i < cfg.eval.render) {
            const std::string png = "render/" + name + "_" + std::to_string(r.index) + ".png";
            render_heatmap(f, (out / png).string());
            res.outputs.push_back(png);
          }
        });
        row.report.rows.push_back(score(r.index, f, r.truth, cfg.eval.threshold));
      }
      res.digests["predictions/" + name] = pred_digest.hex();
      say(name + " mean IoU " + std::to_string(row.report.iou().mean));
      res.rows.push_back(std::move(row));
    };
    for (const auto& model : cfg.eval.models)
      for (int n : cfg.eval.patterns) {
        if (model == "fnn")
          evaluate(model, n, [&](const TrainingRecord& r) { return models.fnn.at(n).predict_field(first_patterns(r, static_cast<std::size_t>(n))); });
        else
          evaluate(model, n, [&](const TrainingRecord& r) { return models.cnn.at(n).predict_field(first_patterns(r, static_cast<std::size_t>(n))); });
      }
    if (cfg.eval.dsm_baseline) {
      if (!probe) probe = std::make_unique<ProbingSource>(ProbingSource::numeric_dipole(builder.background()));
      evaluate("dsm", 1, [&](const TrainingRecord& r) {
        return index_field_classic(r.pairs[0].f, r.pairs[0].g, *builder.background(), cfg.eval.dsm_gamma, *probe).field;
      });
    }
  }
  if (cfg.eval.render > 0)
    in_stage("render truth", [&] {
      for (std::size_t i = 0; i < std::min(cfg.eval.render, test.records.size()); ++i) {
        const std::string png = "render/truth_" + std::to_string(test.records[i].index) + ".png";
        render_heatmap(test.records[i].truth, (out / png).string());
        res.outputs.push_back(png);
      }
    });

  Fnv1a h;
  for (const auto& [k, v] : res.digests) {
    h.update(k);
    h.update(v);
  }
  for (const auto& r : res.rows) h.update(r.report.digest());
  res.digest = h.hex();
  in_stage("report", [&] {
    res.outputs.push_back("report.json");
    res.outputs.push_back("report.txt");
    write_file((out / "report.json").string(), report_json(res).dump(2) + "\n");
    write_file((out / "report.txt").string(), report_table(res));
  });
  return res;
}

}  // namespace ddsm
