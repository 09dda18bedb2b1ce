#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedar/concepts.hpp"
#include "cedar/data.hpp"
#include "cedar/errors.hpp"
#include "cedar/metrics.hpp"
#include "cedar/model.hpp"
#include "cedar/sae.hpp"
#include "cedar/train.hpp"

namespace {

using cedar::Index;
using cedar::Matrix;
using cedar::Vector;
using json = nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw cedar::IoError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw cedar::IoError("write failed for " + path);
}

std::vector<double> parse_targets(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      throw cedar::ArgumentError("bad FVU target: " + item);
    }
    if (pos != item.size() || !(v >= 0.0)) {
      throw cedar::ArgumentError("bad FVU target: " + item);
    }
    out.push_back(v);
  }
  if (out.empty()) throw cedar::ArgumentError("no FVU targets given");
  return out;
}

Matrix threshold_codes(const Matrix& h, double threshold) {
  return h.unaryExpr([threshold](double v) {
    return std::abs(v) <= threshold ? 0.0 : v;
  });
}

// A trained method reduced to what the matched-FVU protocol needs: its code
// matrix on the evaluation set and a decoder from thresholded codes back to
// the original embedding space.
struct MethodUnderEval {
  std::string name;
  Index n_latent = 0;
  Matrix codes;
  std::function<Matrix(const Matrix&)> decode;
};

bool file_has_magic(const std::string& path, const char* magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw cedar::IoError("cannot open model file " + path);
  char buf[4] = {};
  is.read(buf, 4);
  return is.gcount() == 4 && std::equal(buf, buf + 4, magic);
}

MethodUnderEval load_method(const std::string& model_path, const Matrix& z,
                            Index cedar_k) {
  MethodUnderEval m;
  if (file_has_magic(model_path, "CEDM")) {
    auto model = cedar::load_model(model_path);
    const Index k = (cedar_k <= 0) ? model.dim() : cedar_k;
    m.name = "cedar";
    m.n_latent = model.dim();
    m.codes = cedar::topk_rows(cedar::transform_batch(model, z), k);
    m.decode = [model](const Matrix& h) {
      return cedar::inverse_batch(model, h);
    };
    return m;
  }
  if (file_has_magic(model_path, "CSAE")) {
    auto [sae, standardizer] = cedar::load_sae(model_path);
    m.name = "sae-" + cedar::to_string(sae.variant);
    m.n_latent = sae.latent_dim();
    m.codes = cedar::sae_forward(sae, standardizer.apply(z)).h;
    m.decode = [sae, standardizer](const Matrix& h) {
      const Matrix xhat =
          (h * sae.w_dec.transpose()).rowwise() + sae.b_pre.transpose();
      return standardizer.inverse(xhat);
    };
    return m;
  }
  throw cedar::FormatError("unrecognized model file " + model_path);
}

struct EvalSettings {
  std::vector<double> targets;
  double tol = 0.005;
  Index knn = 10;
  Index cknna_max_n = 2048;
  const Eigen::VectorXi* labels = nullptr;
  const cedar::ProbeModel* probe = nullptr;
};

std::vector<cedar::MetricsReport> evaluate_method(const MethodUnderEval& m,
                                                  const Matrix& z,
                                                  const EvalSettings& s) {
  std::vector<cedar::MetricsReport> reports;
  auto recon_at = [&](double t) {
    return m.decode(threshold_codes(m.codes, t));
  };
  const double max_threshold =
      m.codes.size() == 0 ? 0.0 : m.codes.cwiseAbs().maxCoeff();
  const Index n_cknna = std::min<Index>(z.rows(), s.cknna_max_n);

  for (double target : s.targets) {
    cedar::MetricsReport r;
    r.method = m.name;
    r.target_fvu = target;
    r.n_latent = m.n_latent;
    try {
      const auto found =
          cedar::threshold_for_fvu(recon_at, z, target, s.tol, max_threshold);
      r.threshold = found.threshold;
      r.fvu = found.fvu;
      const Matrix recon = recon_at(found.threshold);
      r.k_mean = cedar::active_count(m.codes, found.threshold);
      r.ic_nats = cedar::ic(m.n_latent, m.codes, found.threshold);
      r.cs_mean = cedar::cosine_mean(z, recon);
      if (s.labels && s.probe) {
        r.lp_ce = cedar::probe_eval(*s.probe, recon, *s.labels);
      }
      if (n_cknna > s.knn) {
        r.cknna = cedar::cknna(z.topRows(n_cknna), recon.topRows(n_cknna), s.knn);
      }
    } catch (const cedar::ReachabilityError& e) {
      r.error = std::string(e.what()) + " (closest FVU " + fmt(e.closest_fvu) + ")";
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

void print_reports(const std::vector<cedar::MetricsReport>& reports) {
  for (const auto& r : reports) {
    if (r.error) {
      std::cout << r.method << " target=" << fmt(r.target_fvu)
                << " ERROR: " << *r.error << "\n";
      continue;
    }
    std::cout << r.method << " target=" << fmt(r.target_fvu)
              << " fvu=" << fmt(r.fvu) << " threshold=" << fmt(r.threshold)
              << " K=" << fmt(r.k_mean) << " IC=" << fmt(r.ic_nats)
              << " CS=" << fmt(r.cs_mean);
    if (r.lp_ce) std::cout << " LP=" << fmt(*r.lp_ce);
    if (r.cknna) std::cout << " CKNNA=" << fmt(*r.cknna);
    std::cout << "\n";
  }
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string out;
  cedar::SyntheticSpec spec;
  std::string dtype = "f64";
};

int cmd_generate(const GenerateArgs& a) {
  const auto data = cedar::generate_synthetic(a.spec);
  const cedar::Dtype dtype =
      (a.dtype == "f32") ? cedar::Dtype::f32 : cedar::Dtype::f64;
  cedar::save_embeddings(data.z, a.out, dtype);
  cedar::save_embeddings(data.q, a.out + ".q.emb");
  Matrix b0_row(1, data.b0.size());
  b0_row.row(0) = data.b0.transpose();
  cedar::save_embeddings(b0_row, a.out + ".b0.emb");
  cedar::save_embeddings(data.codes, a.out + ".codes.emb");

  // Sidecar paths are relative to the dataset's directory so a generated
  // set can be moved as a unit.
  const std::string base =
      std::filesystem::path(a.out).filename().string();
  json truth;
  truth["spec"] = {{"dim", a.spec.dim},
                   {"n", a.spec.n},
                   {"k_true", a.spec.k_true},
                   {"noise_sigma", a.spec.noise_sigma},
                   {"seed", a.spec.seed},
                   {"value_min", a.spec.value_min},
                   {"value_max", a.spec.value_max}};
  truth["q_path"] = base + ".q.emb";
  truth["b0_path"] = base + ".b0.emb";
  truth["codes_path"] = base + ".codes.emb";
  write_text(a.out + ".truth.json", truth.dump(2) + "\n");

  std::cout << "generated " << a.spec.n << "x" << a.spec.dim
            << " embeddings at " << a.out << "\n";
  return 0;
}

// ------------------------------------------------------------- train-cedar

struct TrainCedarArgs {
  std::string data;
  std::string out;
  std::string log;
  cedar::TrainConfig cfg;
  Index k_target = 10;
  Index k_max = -1;
};

int cmd_train_cedar(const TrainCedarArgs& a) {
  const Matrix z = cedar::load_embeddings(a.data);
  const auto sched =
      cedar::default_schedule(z.cols(), a.cfg, a.k_target, a.k_max);
  const auto res = cedar::fit(z, a.cfg, sched);
  cedar::save_model(res.model, a.out);
  if (!a.log.empty()) cedar::write_history_ndjson(res.history, a.log);
  const auto& last = res.history.records.back();
  std::cout << "trained cedar model: steps=" << last.step
            << " final_loss=" << fmt(last.loss)
            << " orth_residual=" << fmt(last.orth_residual) << "\n";
  return 0;
}

// --------------------------------------------------------------- train-sae

struct TrainSaeArgs {
  std::string data;
  std::string out;
  std::string log;
  cedar::SaeConfig cfg;
  std::string variant = "topk";
  Index k = -1;
};

int cmd_train_sae(TrainSaeArgs a) {
  a.cfg.variant = cedar::sae_variant_from_string(a.variant);
  a.cfg.k = (a.k >= 0) ? a.k
                       : (a.cfg.variant == cedar::SaeVariant::batchtopk ? 32 : 64);
  const Matrix z = cedar::load_embeddings(a.data);
  const auto res = cedar::train_sae(z, a.cfg);
  cedar::save_sae(res.model, res.standardizer, a.out);
  if (!a.log.empty()) cedar::write_history_ndjson(res.history, a.log);
  const auto& last = res.history.records.back();
  std::cout << "trained " << a.variant
            << " sae: steps=" << last.step << " final_loss=" << fmt(last.loss)
            << " dead_latents=" << last.dead_latents << "\n";
  return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string model;
  std::string data;
  std::string labels;
  std::string targets = "0.25,0.3,0.35";
  double tol = 0.005;
  Index k = 0;  // CEDAR code sparsity at evaluation; 0 means D
  Index knn = 10;
  Index cknna_max_n = 2048;
  std::string csv;
  std::string json_path;
  cedar::ProbeConfig probe_cfg;
};

int run_eval_common(const std::vector<std::string>& model_paths,
                    const EvalArgs& a, bool assert_trends) {
  const Matrix z = cedar::load_embeddings(a.data);

  std::optional<Eigen::VectorXi> labels;
  std::optional<cedar::ProbeModel> probe;
  if (!a.labels.empty()) {
    labels = cedar::load_labels(a.labels);
    probe = cedar::probe_train(z, *labels, a.probe_cfg);
  }

  EvalSettings settings;
  settings.targets = parse_targets(a.targets);
  settings.tol = a.tol;
  settings.knn = a.knn;
  settings.cknna_max_n = a.cknna_max_n;
  settings.labels = labels ? &*labels : nullptr;
  settings.probe = probe ? &*probe : nullptr;

  // Rows grouped by target first, methods within, like the printed table.
  std::vector<std::vector<cedar::MetricsReport>> per_method;
  for (const auto& path : model_paths) {
    per_method.push_back(
        evaluate_method(load_method(path, z, a.k), z, settings));
  }
  std::vector<cedar::MetricsReport> rows;
  for (std::size_t t = 0; t < settings.targets.size(); ++t) {
    for (const auto& method_rows : per_method) rows.push_back(method_rows[t]);
  }

  print_reports(rows);
  if (!a.csv.empty()) write_text(a.csv, cedar::reports_to_csv(rows));
  if (!a.json_path.empty()) write_text(a.json_path, cedar::reports_to_json(rows));

  bool trend_ok = true;
  if (assert_trends) {
    for (const auto& method_rows : per_method) {
      for (std::size_t t = 1; t < method_rows.size(); ++t) {
        if (method_rows[t].error || method_rows[t - 1].error) continue;
        if (method_rows[t].k_mean > method_rows[t - 1].k_mean) {
          std::cout << "TREND VIOLATION: " << method_rows[t].method
                    << " K rises from " << fmt(method_rows[t - 1].k_mean)
                    << " to " << fmt(method_rows[t].k_mean)
                    << " between targets " << fmt(method_rows[t - 1].target_fvu)
                    << " and " << fmt(method_rows[t].target_fvu) << "\n";
          trend_ok = false;
        }
      }
    }
  }

  const bool all_failed = std::all_of(
      rows.begin(), rows.end(),
      [](const cedar::MetricsReport& r) { return r.error.has_value(); });
  if (all_failed) return 2;
  if (!trend_ok) return 1;
  return 0;
}

// ------------------------------------------------------------------ explain

struct ExplainArgs {
  std::string model;
  std::string vocab_embeddings;
  std::string vocab_names;
  std::string data;
  Index row = -1;
  Index k = 10;
  std::string out;
  std::string top_activating;  // "axis,count"
  std::string top_csv;
};

int cmd_explain(const ExplainArgs& a) {
  const auto model = cedar::load_model(a.model);
  const auto vocab =
      cedar::load_vocabulary(a.vocab_embeddings, a.vocab_names);
  const auto map = cedar::match_axes(model, vocab);
  const Matrix z = cedar::load_embeddings(a.data);
  if (z.cols() != model.dim()) {
    throw cedar::DimensionError("explain: dataset dimension " +
                                std::to_string(z.cols()) +
                                " does not match model " +
                                std::to_string(model.dim()));
  }

  json out;
  out["axis_map"] = json::array();
  for (Index d = 0; d < model.dim(); ++d) {
    const auto& ac = map.axes[static_cast<std::size_t>(d)];
    out["axis_map"].push_back(
        {{"axis", d},
         {"concept_index", ac.concept_index},
         {"concept", vocab.names[static_cast<std::size_t>(ac.concept_index)]},
         {"cosine", ac.cosine}});
  }

  Index lo = 0, hi = z.rows();
  if (a.row >= 0) {
    if (a.row >= z.rows()) {
      throw cedar::IndexError("explain: row " + std::to_string(a.row) +
                              " out of range");
    }
    lo = a.row;
    hi = a.row + 1;
  }
  out["explanations"] = json::array();
  for (Index i = lo; i < hi; ++i) {
    const auto e =
        cedar::explain(model, map, vocab, z.row(i).transpose(), a.k, i);
    json entries = json::array();
    for (const auto& entry : e.entries) {
      entries.push_back({{"axis", entry.axis},
                         {"concept", entry.concept_name},
                         {"coefficient", entry.coefficient},
                         {"cosine", entry.cosine}});
    }
    out["explanations"].push_back(
        {{"sample", e.sample_id}, {"entries", entries}});
  }

  const std::string text = out.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }

  if (!a.top_activating.empty()) {
    const auto comma = a.top_activating.find(',');
    if (comma == std::string::npos) {
      throw cedar::ArgumentError("--top-activating wants \"axis,count\"");
    }
    Index axis = 0, count = 0;
    try {
      axis = std::stol(a.top_activating.substr(0, comma));
      count = std::stol(a.top_activating.substr(comma + 1));
    } catch (const std::exception&) {
      throw cedar::ArgumentError("--top-activating wants \"axis,count\"");
    }
    const auto top = cedar::top_activating(model, z, axis, count);
    const auto& ac = map.axes.at(static_cast<std::size_t>(axis));
    std::string csv = "rank,row_index,activation,concept\n";
    for (std::size_t r = 0; r < top.size(); ++r) {
      csv += std::to_string(r + 1) + "," + std::to_string(top[r].first) + "," +
             fmt(top[r].second) + "," +
             vocab.names[static_cast<std::size_t>(ac.concept_index)] + "\n";
    }
    if (a.top_csv.empty()) {
      std::cout << csv;
    } else {
      write_text(a.top_csv, csv);
    }
  }
  return 0;
}

void apply_thread_cap() {
  if (const char* env = std::getenv("CEDAR_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw cedar::ArgumentError(
          "CEDAR_THREADS must be a positive integer, got \"" +
          std::string(env) + "\"");
    }
    Eigen::setNbThreads(static_cast<int>(n));
  } else {
    Eigen::setNbThreads(1);
  }
}

void add_train_flags(CLI::App* cmd, cedar::TrainConfig& cfg) {
  cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate");
  cmd->add_option("--batch-size", cfg.batch_size, "minibatch size");
  cmd->add_option("--steps", cfg.total_steps, "total optimizer steps");
  cmd->add_option("--tau", cfg.tau,
                  "homotopy length in steps (-1: 30% of steps)");
  cmd->add_option("--seed", cfg.seed, "RNG seed");
  cmd->add_option("--beta1", cfg.adam_beta1, "Adam beta1");
  cmd->add_option("--beta2", cfg.adam_beta2, "Adam beta2");
  cmd->add_option("--eps", cfg.adam_eps, "Adam epsilon");
}

void add_eval_flags(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--data", a.data, "EMB1 evaluation dataset")->required();
  cmd->add_option("--labels", a.labels, "LBL1 labels for linear probing");
  cmd->add_option("--fvu-targets", a.targets, "comma-separated FVU targets");
  cmd->add_option("--tol", a.tol, "FVU matching tolerance");
  cmd->add_option("--k", a.k, "CEDAR code sparsity at evaluation (0: D)");
  cmd->add_option("--knn", a.knn, "CKNNA neighborhood size");
  cmd->add_option("--cknna-max-n", a.cknna_max_n,
                  "cap on rows entering the CKNNA kernel");
  cmd->add_option("--csv", a.csv, "CSV report path");
  cmd->add_option("--json", a.json_path, "JSON report path");
  cmd->add_option("--probe-lr", a.probe_cfg.learning_rate, "probe learning rate");
  cmd->add_option("--probe-epochs", a.probe_cfg.epochs, "probe epochs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CEDAR: invertible sparse reparameterization of embeddings"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand(
      "generate", "write a synthetic embedding dataset with ground truth");
  generate->add_option("--out", gen.out, "output EMB1 path")->required();
  generate->add_option("--dim", gen.spec.dim, "embedding dimension");
  generate->add_option("--n", gen.spec.n, "number of samples");
  generate->add_option("--k-true", gen.spec.k_true, "ground-truth sparsity");
  generate->add_option("--noise-sigma", gen.spec.noise_sigma, "noise level");
  generate->add_option("--seed", gen.spec.seed, "RNG seed");
  generate->add_option("--value-min", gen.spec.value_min,
                       "min coefficient magnitude");
  generate->add_option("--value-max", gen.spec.value_max,
                       "max coefficient magnitude");
  generate->add_option("--dtype", gen.dtype, "payload dtype: f64 or f32")
      ->check(CLI::IsMember({"f64", "f32"}));

  TrainCedarArgs tc;
  auto* train_cedar =
      app.add_subcommand("train-cedar", "fit the orthogonal reparameterization");
  train_cedar->add_option("--data", tc.data, "EMB1 training data")->required();
  train_cedar->add_option("--out", tc.out, "model output path")->required();
  train_cedar->add_option("--log", tc.log, "NDJSON history path");
  train_cedar->add_option("--k-target", tc.k_target, "target sparsity");
  train_cedar->add_option("--k-max", tc.k_max,
                          "random-k upper bound (-1: 2*k_target-1)");
  add_train_flags(train_cedar, tc.cfg);

  TrainSaeArgs ts;
  auto* train_sae =
      app.add_subcommand("train-sae", "fit a sparse-autoencoder baseline");
  train_sae->add_option("--data", ts.data, "EMB1 training data")->required();
  train_sae->add_option("--out", ts.out, "model output path")->required();
  train_sae->add_option("--log", ts.log, "NDJSON history path");
  train_sae->add_option("--variant", ts.variant, "relu, topk, or batchtopk")
      ->check(CLI::IsMember({"relu", "topk", "batchtopk"}));
  train_sae->add_option("--k", ts.k,
                        "sparsity (default: 64 topk, 32 batchtopk)");
  train_sae->add_option("--lambda", ts.cfg.lambda, "relu L1 penalty");
  train_sae->add_option("--expansion", ts.cfg.expansion, "latent expansion");
  add_train_flags(train_sae, ts.cfg.train);

  EvalArgs ev;
  std::string eval_model;
  auto* eval_cmd = app.add_subcommand(
      "eval", "matched-FVU metrics for one model on a dataset");
  eval_cmd->add_option("--model", eval_model, "model file (CEDM or CSAE)")
      ->required();
  add_eval_flags(eval_cmd, ev);

  EvalArgs cmp;
  std::vector<std::string> cmp_models;
  bool assert_trends = false;
  auto* compare_cmd = app.add_subcommand(
      "compare", "matched-FVU comparison across model files");
  compare_cmd
      ->add_option("--model", cmp_models,
                   "model file, repeat for each method (>= 2)")
      ->required();
  compare_cmd->add_flag("--assert-trends", assert_trends,
                        "fail if K increases with the FVU target");
  add_eval_flags(compare_cmd, cmp);

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand(
      "explain", "concept explanations for samples under a CEDAR model");
  explain_cmd->add_option("--model", ex.model, "CEDM model file")->required();
  explain_cmd
      ->add_option("--vocab-embeddings", ex.vocab_embeddings,
                   "EMB1 concept embeddings")
      ->required();
  explain_cmd
      ->add_option("--vocab-names", ex.vocab_names,
                   "UTF-8 names, one per line")
      ->required();
  explain_cmd->add_option("--data", ex.data, "EMB1 dataset")->required();
  explain_cmd->add_option("--row", ex.row, "explain one row only");
  explain_cmd->add_option("--k", ex.k, "explanation sparsity");
  explain_cmd->add_option("--out", ex.out, "JSON output path (default stdout)");
  explain_cmd->add_option("--top-activating", ex.top_activating,
                          "\"axis,count\": emit the top-activating ranking");
  explain_cmd->add_option("--top-csv", ex.top_csv,
                          "CSV path for --top-activating (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    apply_thread_cap();
    if (*generate) return cmd_generate(gen);
    if (*train_cedar) return cmd_train_cedar(tc);
    if (*train_sae) return cmd_train_sae(ts);
    if (*eval_cmd) return run_eval_common({eval_model}, ev, false);
    if (*compare_cmd) {
      if (cmp_models.size() < 2) {
        throw cedar::ArgumentError("compare needs at least two --model files");
      }
      return run_eval_common(cmp_models, cmp, assert_trends);
    }
    if (*explain_cmd) return cmd_explain(ex);
  } catch (const cedar::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const cedar::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const cedar::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
