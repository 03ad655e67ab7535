#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ddsm/config.hpp"
#include "ddsm/experiment.hpp"
#include "ddsm/nn/checks.hpp"

using namespace ddsm;
namespace fs = std::filesystem;

namespace {

void log_line(const std::string& s) {
  std::fprintf(stderr, "%s\n", s.c_str());
  std::fflush(stderr);
}

ExperimentConfig base_config(const std::string& path) {
  return path.empty() ? parse_config(Json::object()) : load_config(path);
}

void write_resolved(const ExperimentConfig& c, const fs::path& where) {
  if (!where.parent_path().empty()) fs::create_directories(where.parent_path());
  write_file(where.string(), resolved_text(c));
}

std::string eiti_name(std::uint64_t index) {
  std::string n = record_file_name(index);
  return n.substr(0, n.size() - 4) + "eiti";
}

// A checkpoint is stored as <path> with its model config at <path>.json.
struct ModelFiles {
  std::string model;
  ExperimentConfig cfg;
  int patterns = 0;
};

ModelFiles read_model_config(const std::string& ckpt) {
  const Json j = Json::parse(read_file(ckpt + ".json"), nullptr, false);
  if (j.is_discarded() || !j.contains("model") || !j.contains("patterns") || !j.contains("config"))
    throw ConfigError("malformed model config " + ckpt + ".json");
  ModelFiles m;
  m.model = j["model"].get<std::string>();
  m.patterns = j["patterns"].get<int>();
  m.cfg = parse_config(j["config"]);
  return m;
}

void write_model_config(const std::string& ckpt, const std::string& model, int patterns, const ExperimentConfig& c) {
  const Json j{{"model", model}, {"patterns", patterns}, {"config", to_json(c)}};
  write_file(ckpt + ".json", j.dump(2) + "\n");
}

std::vector<const TrainingRecord*> pointers(const std::vector<TrainingRecord>& r) { return record_pointers(r); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct sampling and learned direct sampling for EIT"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* c) { c->add_option("--config", config_path, "JSON configuration file"); };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Simulate a dataset of Cauchy records");
  add_config(gen);
  std::string out_dir;
  std::optional<int> scenario, patterns;
  std::optional<std::size_t> count, grid_n;
  std::optional<std::uint64_t> seed;
  double gen_noise = 0.0;
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--scenario", scenario, "1, 2 or 3 (0: no inclusions)");
  gen->add_option("--count", count, "number of records");
  gen->add_option("--patterns", patterns, "Cauchy pairs per record");
  gen->add_option("--grid", grid_n, "nodes per side");
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--noise", gen_noise, "relative noise level on the voltages");

  // train-fnn / train-cnn
  std::string data_dir, ckpt;
  std::optional<std::size_t> iterations;
  std::optional<double> alpha;
  auto add_train = [&](CLI::App* c) {
    add_config(c);
    c->add_option("--data", data_dir, "dataset directory")->required();
    c->add_option("--out", ckpt, "checkpoint path")->required();
    c->add_option("--patterns", patterns, "Cauchy pairs used (default: all in the dataset)");
    c->add_option("--iterations", iterations, "SGD iterations");
    c->add_option("--alpha", alpha, "learning rate");
    c->add_option("--seed", seed, "seed for initialization and minibatches");
  };
  auto* train_fnn_cmd = app.add_subcommand("train-fnn", "Train the fully connected model");
  add_train(train_fnn_cmd);
  auto* train_cnn_cmd = app.add_subcommand("train-cnn", "Train the convolutional model");
  add_train(train_cnn_cmd);

  // dsm
  auto* dsm = app.add_subcommand("dsm", "Classic direct sampling index with one Cauchy pair");
  double gamma = 1.0;
  std::optional<std::size_t> limit;
  dsm->add_option("--data", data_dir, "dataset directory")->required();
  dsm->add_option("--out", out_dir, "output directory")->required();
  dsm->add_option("--gamma", gamma, "order of the surface Laplacian");
  dsm->add_option("--limit", limit, "only the first records");

  // predict
  auto* predict = app.add_subcommand("predict", "Predict index fields with a trained model");
  double pred_noise = 0.0;
  predict->add_option("--checkpoint", ckpt, "checkpoint written by train-fnn or train-cnn")->required();
  predict->add_option("--data", data_dir, "dataset directory")->required();
  predict->add_option("--out", out_dir, "output directory")->required();
  predict->add_option("--noise", pred_noise, "test-time relative noise level");
  predict->add_option("--limit", limit, "only the first records");

  // eval
  auto* eval = app.add_subcommand("eval", "Score predicted index fields against the truth");
  std::string pred_dir, report_path;
  double threshold = 0.5;
  eval->add_option("--pred", pred_dir, "directory of .eiti predictions")->required();
  eval->add_option("--data", data_dir, "dataset directory holding the truth")->required();
  eval->add_option("--out", report_path, "report JSON path");
  eval->add_option("--threshold", threshold, "mask threshold");

  // render
  auto* render = app.add_subcommand("render", "Render an index field as a PNG heatmap");
  std::string field_path, png_path;
  std::size_t scale = 4;
  render->add_option("--field", field_path, ".eiti file")->required();
  render->add_option("--out", png_path, "PNG path")->required();
  render->add_option("--scale", scale, "pixels per node");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every layer and both models");
  std::uint64_t check_seed = 1;
  gradcheck->add_option("--seed", check_seed, "seed for the random test tensors");

  // sensitivity-study
  auto* sens = app.add_subcommand("sensitivity-study", "Shielded center inclusion: boundary differences and reconstructions");
  std::optional<std::string> fnn_ckpt, cnn_ckpt;
  sens->add_option("--out", out_dir, "output directory")->required();
  sens->add_option("--grid", grid_n, "nodes per side");
  sens->add_option("--fnn", fnn_ckpt, "FNN checkpoint to reconstruct both conductivities");
  sens->add_option("--cnn", cnn_ckpt, "CNN checkpoint to reconstruct both conductivities");

  // run
  auto* run = app.add_subcommand("run", "Full experiment: data, training, prediction, evaluation");
  run->add_option("--config", config_path, "JSON configuration file")->required();
  std::optional<std::string> run_out;
  run->add_option("--out", run_out, "override output_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      ExperimentConfig c = base_config(config_path);
      if (scenario) c.data.scenario = *scenario;
      if (count) c.data.train = *count;
      if (patterns) c.data.patterns = *patterns;
      if (grid_n) c.data.grid = *grid_n;
      if (seed) c.seed = *seed;
      c.fnn.patterns = c.cnn.patterns = c.data.patterns;
      c.validate();
      DatasetSpec spec = c.train_spec();
      spec.noise.delta = gen_noise;
      const Manifest m = generate_dataset(spec, out_dir);
      write_resolved(c, fs::path(out_dir) / "config.resolved.json");
      std::printf("wrote %s records to %s, digest %s\n", m.get("count").c_str(), out_dir.c_str(), m.get("digest").c_str());
    } else if (*train_fnn_cmd || *train_cnn_cmd) {
      const bool is_fnn = train_fnn_cmd->parsed();
      ExperimentConfig c = base_config(config_path);
      const CauchyDataset ds = load_dataset(data_dir);
      const int n = patterns ? *patterns : ds.spec.patterns;
      if (n < 1 || n > ds.spec.patterns) throw ConfigError("--patterns must lie in 1.." + std::to_string(ds.spec.patterns));
      if (seed) c.seed = *seed;
      c.data.patterns = ds.spec.patterns;
      c.data.grid = ds.spec.grid.n1;
      if (iterations) (is_fnn ? c.fnn.iterations : c.cnn.iterations) = *iterations;
      if (alpha) (is_fnn ? c.fnn.alpha : c.cnn.alpha) = *alpha;
      c.fnn.patterns = c.cnn.patterns = n;
      c.validate();
      const CauchyDataset view = first_patterns(ds, n);
      const auto recs = pointers(view.records);
      auto progress = [](std::size_t it, double loss) {
        if ((it + 1) % 1000 == 0) log_line("iteration " + std::to_string(it + 1) + " loss " + std::to_string(loss));
        return true;
      };
      TrainResult tr;
      std::string blob;
      if (is_fnn) {
        FnnModel m(c.fnn, derive_seed(c.seed, static_cast<std::uint64_t>(n), 10));
        tr = train_fnn(m, recs, derive_seed(c.seed, static_cast<std::uint64_t>(n), 11), progress);
        blob = m.params().serialize();
      } else {
        CnnModel m(c.cnn, derive_seed(c.seed, static_cast<std::uint64_t>(n), 20));
        tr = train_cnn(m, recs, derive_seed(c.seed, static_cast<std::uint64_t>(n), 21), progress);
        blob = m.params().serialize();
      }
      if (fs::path(ckpt).has_parent_path()) fs::create_directories(fs::path(ckpt).parent_path());
      write_file(ckpt, blob);
      write_model_config(ckpt, is_fnn ? "fnn" : "cnn", n, c);
      write_file(ckpt + ".loss.txt", loss_trace_text(tr.loss));
      std::printf("checkpoint %s digest %s final loss %.6g\n", ckpt.c_str(), fnv1a_hex(blob).c_str(),
                  tr.loss.empty() ? 0.0 : tr.loss.back());
    } else if (*dsm) {
      const CauchyDataset ds = load_dataset(data_dir);
      const RecordBuilder builder(ds.spec.grid);
      const auto probe = ProbingSource::numeric_dipole(builder.background());
      fs::create_directories(out_dir);
      Fnv1a h;
      const std::size_t n = limit ? std::min(*limit, ds.records.size()) : ds.records.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& r = ds.records[i];
        const auto idx = index_field_classic(r.pairs[0].f, r.pairs[0].g, *builder.background(), gamma, probe);
        const std::string blob = encode_index_field(idx.field);
        h.update(blob);
        write_file((fs::path(out_dir) / eiti_name(r.index)).string(), blob);
      }
      std::printf("wrote %zu index fields to %s, digest %s\n", n, out_dir.c_str(), h.hex().c_str());
    } else if (*predict) {
      const ModelFiles mf = read_model_config(ckpt);
      const auto store = nn::ParameterStore::deserialize(read_file(ckpt));
      const CauchyDataset ds = load_dataset(data_dir);
      if (ds.spec.patterns < mf.patterns) throw ConfigError("dataset has fewer Cauchy pairs than the model needs");
      const RecordBuilder builder(ds.spec.grid);
      std::optional<FnnModel> fnn;
      std::optional<CnnModel> cnn;
      if (mf.model == "fnn") {
        FnnConfig fc = mf.cfg.fnn;
        fc.patterns = mf.patterns;
        fnn.emplace(fc, 0);
        fnn->params().load_values(store);
      } else if (mf.model == "cnn") {
        CnnConfig cc = mf.cfg.cnn;
        cc.patterns = mf.patterns;
        cnn.emplace(cc, 0);
        cnn->params().load_values(store);
      } else {
        throw ConfigError("unknown model kind " + mf.model);
      }
      fs::create_directories(out_dir);
      Fnv1a h;
      const std::size_t n = limit ? std::min(*limit, ds.records.size()) : ds.records.size();
      for (std::size_t i = 0; i < n; ++i) {
        TrainingRecord r = first_patterns(ds.records[i], static_cast<std::size_t>(mf.patterns));
        if (pred_noise > 0.0) r = builder.with_noise(r, test_noise(ds.spec, r.index, pred_noise));
        const IndexField f = fnn ? fnn->predict_field(r) : cnn->predict_field(r);
        const std::string blob = encode_index_field(f);
        h.update(blob);
        write_file((fs::path(out_dir) / eiti_name(r.index)).string(), blob);
      }
      std::printf("wrote %zu predictions to %s, digest %s\n", n, out_dir.c_str(), h.hex().c_str());
    } else if (*eval) {
      const CauchyDataset ds = load_dataset(data_dir);
      EvalReport rep;
      rep.label = pred_dir;
      for (const auto& r : ds.records) {
        const fs::path p = fs::path(pred_dir) / eiti_name(r.index);
        if (!fs::exists(p)) continue;
        rep.rows.push_back(score(r.index, decode_index_field(read_file(p.string())), r.truth, threshold));
      }
      if (rep.rows.empty()) throw IoError("no predictions found in " + pred_dir);
      Json rows = Json::array();
      for (const auto& s : rep.rows)
        rows.push_back({{"sample", s.sample}, {"iou", s.iou}, {"dice", s.dice}, {"accuracy", s.accuracy}, {"mse", s.mse}});
      const Json j{{"samples", rows},
                   {"mean_iou", rep.iou().mean},
                   {"std_iou", rep.iou().stddev},
                   {"mean_dice", rep.dice().mean},
                   {"mean_accuracy", rep.accuracy().mean},
                   {"mean_mse", rep.mse().mean},
                   {"digest", rep.digest()}};
      if (!report_path.empty()) write_file(report_path, j.dump(2) + "\n");
      std::printf("samples %zu  IoU %.4f +- %.4f  Dice %.4f  Acc %.4f  MSE %.5f  digest %s\n", rep.rows.size(),
                  rep.iou().mean, rep.iou().stddev, rep.dice().mean, rep.accuracy().mean, rep.mse().mean,
                  rep.digest().c_str());
    } else if (*render) {
      render_heatmap(decode_index_field(read_file(field_path)), png_path, scale);
      std::printf("wrote %s\n", png_path.c_str());
    } else if (*gradcheck) {
      bool ok = true;
      for (const auto& c : nn::standard_gradchecks(check_seed)) {
        std::printf("%-20s max rel err %.3e (tol %.0e) %s\n", c.name.c_str(), c.report.max_rel_error, c.tolerance,
                    c.pass() ? "ok" : ("FAIL at " + c.report.worst).c_str());
        ok = ok && c.pass();
      }
      if (!ok) throw NumericalError("gradient check failed");
    } else if (*sens) {
      SensitivityConfig sc;
      if (grid_n) sc.grid = CartesianGrid::square(*grid_n);
      const auto diffs = center_sensitivity(sc);
      fs::create_directories(out_dir);
      std::string txt = "omega relative_difference\n";
      for (std::size_t w = 0; w < diffs.size(); ++w) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu %.6f\n", w + 1, diffs[w]);
        txt += buf;
      }
      write_file((fs::path(out_dir) / "differences.txt").string(), txt);
      std::fputs(txt.c_str(), stdout);
      for (const auto& [kind, path] : {std::pair{std::string("fnn"), fnn_ckpt}, std::pair{std::string("cnn"), cnn_ckpt}}) {
        if (!path) continue;
        const ModelFiles mf = read_model_config(*path);
        const auto store = nn::ParameterStore::deserialize(read_file(*path));
        const RecordBuilder builder(sc.grid);
        for (const auto& [tag, sample] : {std::pair{std::string("sigma1"), sc.with_center()}, std::pair{std::string("sigma2"), sc.without_center()}}) {
          const TrainingRecord r = builder.build(sample, mf.patterns, {});
          IndexField f;
          if (kind == "fnn") {
            FnnConfig fc = mf.cfg.fnn;
            fc.patterns = mf.patterns;
            FnnModel m(fc, 0);
            m.params().load_values(store);
            f = m.predict_field(r);
          } else {
            CnnConfig cc = mf.cfg.cnn;
            cc.patterns = mf.patterns;
            CnnModel m(cc, 0);
            m.params().load_values(store);
            f = m.predict_field(r);
          }
          render_heatmap(f, (fs::path(out_dir) / (kind + "_" + tag + ".png")).string());
          render_heatmap(r.truth, (fs::path(out_dir) / ("truth_" + tag + ".png")).string());
          std::printf("%s %s IoU %.4f\n", kind.c_str(), tag.c_str(), iou(f, r.truth));
        }
      }
    } else if (*run) {
      ExperimentConfig c = load_config(config_path);
      if (run_out) c.output_dir = *run_out;
      const auto res = run_experiment(c, log_line);
      std::fputs(report_table(res).c_str(), stdout);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
