// calq: command-line pipeline for calibrated fuzzy query answering.
//
//   calq synth        write a synthetic incomplete KG
//   calq ingest       load and summarize split files
//   calq train-kgc    fit an embedding model
//   calq calibrate    fit the adaptation matrix on training queries
//   calq build-tensor materialize the thresholded calibrated tensor
//   calq gen-queries  sample benchmark-structure queries
//   calq eval         rank hard answers and report MRR / Hits@K

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calq/calibration.hpp"
#include "calq/eval_harness.hpp"
#include "calq/key_value.hpp"
#include "calq/kg_store.hpp"
#include "calq/kgc_model.hpp"
#include "calq/query_lang.hpp"
#include "calq/sparse_tensor.hpp"
#include "calq/synthetic.hpp"

namespace fs = std::filesystem;
using namespace calq;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GraphOptions {
  std::string train;
  std::string valid;
  std::string test;
  bool no_inverse = false;
};

void add_graph_options(CLI::App* cmd, GraphOptions& g) {
  cmd->add_option("--train", g.train, "training triplets (TSV)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--valid", g.valid, "validation triplets (TSV)")->check(CLI::ExistingFile);
  cmd->add_option("--test", g.test, "test triplets (TSV)")->check(CLI::ExistingFile);
  cmd->add_flag("--no-inverse", g.no_inverse, "do not add inverse relations");
}

KnowledgeGraph load_graph(const GraphOptions& g) {
  auto kg = KnowledgeGraph::load(g.train, g.valid, g.test);
  if (kg.duplicates_dropped() > 0) std::cerr << "dropped " << kg.duplicates_dropped() << " duplicate triplets\n";
  return g.no_inverse ? kg : add_inverse_relations(kg);
}

void describe_inputs(Manifest& m, const GraphOptions& g) {
  m.add_input("input.train", g.train);
  if (!g.valid.empty()) m.add_input("input.valid", g.valid);
  if (!g.test.empty()) m.add_input("input.test", g.test);
  m.add("inverse_relations", g.no_inverse ? "false" : "true");
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Manifest start_manifest(const std::string& command) {
  Manifest m;
  m.add("command", command);
  m.add("created", timestamp());
  return m;
}

template <typename T>
std::string str(const T& v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

void check_model_shape(const EmbeddingModel& model, const KnowledgeGraph& kg) {
  if (model.num_entities() != kg.num_entities() || model.num_relations() != kg.num_relations()) {
    std::ostringstream msg;
    msg << "model shape " << model.num_entities() << "x" << model.num_relations() << " does not match graph "
        << kg.num_entities() << "x" << kg.num_relations() << " (check --no-inverse)";
    throw std::runtime_error(msg.str());
  }
}

std::vector<std::string> expand_structures(const std::vector<std::string>& requested) {
  std::vector<std::string> out;
  for (const auto& item : requested) {
    if (item == "all") {
      for (auto s : kStructureNames) out.emplace_back(s);
    } else if (item == "train") {
      for (const auto& s : CalibrationConfig{}.query_types) out.push_back(s);
    } else if (structure_index(item) >= 0) {
      out.push_back(item);
    } else {
      throw UsageError("unknown query structure '" + item + "'");
    }
  }
  return out;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::validation;
  if (name == "test") return Split::test;
  throw UsageError("unknown split '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calq: calibrated fuzzy query answering over knowledge graphs"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "read option defaults from a config file");
  unsigned threads = 1;
  app.add_option("--threads", threads, "worker threads, 0 = all cores (1 is bit-reproducible)");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic incomplete knowledge graph");
  SyntheticConfig syn;
  std::string synth_out;
  synth->add_option("--entities", syn.entities)->capture_default_str();
  synth->add_option("--relations", syn.relations)->capture_default_str();
  synth->add_option("--latent-rank", syn.latent_rank)->capture_default_str();
  synth->add_option("--seed", syn.seed)->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load split files and report vocabulary sizes");
  GraphOptions ingest_graph;
  std::string ingest_out;
  add_graph_options(ingest, ingest_graph);
  ingest->add_option("--out", ingest_out, "directory for entities.tsv / relations.tsv");

  // train-kgc
  auto* train_cmd = app.add_subcommand("train-kgc", "train an embedding model");
  GraphOptions train_graph;
  TrainConfig tc;
  std::string model_name = "complex";
  std::string init = "uniform";
  std::string train_out;
  add_graph_options(train_cmd, train_graph);
  train_cmd->add_option("--model", model_name, "complex|distmult|cp|simple")->capture_default_str();
  train_cmd->add_option("--dim", tc.rank, "embedding rank")->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
  train_cmd->add_option("--l3", tc.l3, "N3 weight")->capture_default_str();
  train_cmd->add_option("--l1", tc.relation_prediction, "relation-prediction weight")->capture_default_str();
  train_cmd->add_option("--seed", tc.seed)->capture_default_str();
  train_cmd->add_option("--init", init, "uniform (train) or zero (untrained uniform scorer)")
      ->check(CLI::IsMember({"uniform", "zero"}))
      ->capture_default_str();
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "fit the adaptation matrix W");
  GraphOptions cal_graph;
  CalibrationConfig cc;
  std::string cal_model;
  std::string cal_queries;
  std::string cal_mode = "S1234";
  std::string cal_out;
  add_graph_options(cal_cmd, cal_graph);
  cal_cmd->add_option("--model", cal_model, "model checkpoint")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--queries", cal_queries, "training query file")->check(CLI::ExistingFile);
  cal_cmd->add_option("--alpha", cc.alpha)->capture_default_str();
  cal_cmd->add_option("--epochs", cc.epochs)->check(CLI::Range(0, 5))->capture_default_str();
  cal_cmd->add_option("--lr", cc.learning_rate)->capture_default_str();
  cal_cmd->add_option("--batch", cc.batch_size, "queries per batch")->capture_default_str();
  cal_cmd->add_option("--seed", cc.seed)->capture_default_str();
  cal_cmd->add_option("--mode", cal_mode, "S12|S123|S1234")->capture_default_str();
  cal_cmd->add_option("--out", cal_out, "adaptation matrix path");

  // build-tensor
  auto* build_cmd = app.add_subcommand("build-tensor", "materialize the thresholded calibrated tensor");
  GraphOptions build_graph;
  BuildOptions bo;
  std::string build_model;
  std::string build_w;
  std::string build_mode = "S1234";
  double build_alpha = 0.1;
  std::string build_out;
  add_graph_options(build_cmd, build_graph);
  build_cmd->add_option("--model", build_model)->required()->check(CLI::ExistingFile);
  build_cmd->add_option("--w", build_w, "adaptation matrix (identity when omitted)")->check(CLI::ExistingFile);
  build_cmd->add_option("--epsilon", bo.epsilon)->capture_default_str();
  build_cmd->add_option("--mode", build_mode, "S12|S123|S1234")->capture_default_str();
  build_cmd->add_option("--alpha", build_alpha)->capture_default_str();
  build_cmd->add_option("--memory-cap", bo.memory_cap_bytes, "byte budget, 0 = unlimited")->capture_default_str();
  build_cmd->add_option("--out", build_out)->required();

  // gen-queries
  auto* gen_cmd = app.add_subcommand("gen-queries", "sample benchmark-structure queries");
  GraphOptions gen_graph;
  std::vector<std::string> gen_structures{"all"};
  std::size_t gen_count = 100;
  std::uint64_t gen_seed = 0;
  std::string gen_split = "test";
  GenerationConfig gen_cfg;
  std::string gen_out;
  add_graph_options(gen_cmd, gen_graph);
  gen_cmd->add_option("--structures", gen_structures, "names, 'all' or 'train'")->delimiter(',');
  gen_cmd->add_option("--count", gen_count, "queries per structure")->capture_default_str();
  gen_cmd->add_option("--seed", gen_seed)->capture_default_str();
  gen_cmd->add_option("--split", gen_split, "train|valid|test")->capture_default_str();
  gen_cmd->add_option("--max-answers", gen_cfg.max_answers)->capture_default_str();
  gen_cmd->add_option("--out", gen_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate queries and report MRR / Hits@K");
  GraphOptions eval_graph;
  std::string eval_tensor;
  std::string eval_model;
  std::string eval_w;
  std::string eval_mode = "S1234";
  double eval_alpha = 0.1;
  std::string eval_queries;
  std::string eval_report;
  add_graph_options(eval_cmd, eval_graph);
  auto* tensor_opt = eval_cmd->add_option("--tensor", eval_tensor)->check(CLI::ExistingFile);
  auto* model_opt = eval_cmd->add_option("--model", eval_model, "evaluate the provider directly")
                        ->check(CLI::ExistingFile);
  tensor_opt->excludes(model_opt);
  eval_cmd->add_option("--w", eval_w)->check(CLI::ExistingFile);
  eval_cmd->add_option("--mode", eval_mode)->capture_default_str();
  eval_cmd->add_option("--alpha", eval_alpha)->capture_default_str();
  eval_cmd->add_option("--queries", eval_queries)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", eval_report, "key-value report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      auto kg = make_synthetic_kg(syn);
      write_splits(kg, synth_out);
      std::cout << "wrote " << kg.split(Split::train).size() << " train, " << kg.split(Split::validation).size()
                << " valid, " << kg.split(Split::test).size() << " test triplets to " << synth_out << '\n';
      auto m = start_manifest("synth");
      m.add("entities", str(syn.entities));
      m.add("relations", str(syn.relations));
      m.add("latent_rank", str(syn.latent_rank));
      m.add("seed", str(syn.seed));
      m.write(fs::path(synth_out) / "splits");
    } else if (*ingest) {
      auto kg = load_graph(ingest_graph);
      std::cout << "entities   " << kg.num_entities() << '\n'
                << "relations  " << kg.num_relations() << " (" << kg.base_relations() << " base)\n"
                << "train      " << kg.split(Split::train).size() << '\n'
                << "valid      " << kg.split(Split::validation).size() << '\n'
                << "test       " << kg.split(Split::test).size() << '\n';
      if (!ingest_out.empty()) {
        fs::create_directories(ingest_out);
        kg.entities().save(fs::path(ingest_out) / "entities.tsv");
        kg.relations().save(fs::path(ingest_out) / "relations.tsv");
        auto m = start_manifest("ingest");
        describe_inputs(m, ingest_graph);
        m.add("artifact.entities", (fs::path(ingest_out) / "entities.tsv").string());
        m.add("artifact.relations", (fs::path(ingest_out) / "relations.tsv").string());
        m.write(fs::path(ingest_out) / "vocab");
      }
    } else if (*train_cmd) {
      auto kg = load_graph(train_graph);
      try {
        tc.kind = parse_model_kind(model_name);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      EmbeddingModel model;
      if (init == "zero") {
        model = EmbeddingModel(tc.kind, tc.rank, kg.num_entities(), kg.num_relations());
      } else {
        TrainStats stats;
        model = train(kg, tc, &stats);
        if (!stats.epoch_loss.empty()) std::cout << "final epoch loss " << stats.epoch_loss.back() << '\n';
      }
      if (!kg.split(Split::validation).empty()) {
        std::cout << "validation MRR (filtered) "
                  << link_prediction_mrr(model, kg.split(Split::validation), kg, SplitSet::all()) << '\n';
      }
      model.save(train_out);
      auto m = start_manifest("train-kgc");
      describe_inputs(m, train_graph);
      m.add("model", std::string(to_string(tc.kind)));
      m.add("dim", str(tc.rank));
      m.add("epochs", str(tc.epochs));
      m.add("batch", str(tc.batch_size));
      m.add("lr", str(tc.learning_rate));
      m.add("l3", str(tc.l3));
      m.add("l1", str(tc.relation_prediction));
      m.add("init", init);
      m.add("seed", str(tc.seed));
      m.add("artifact", train_out);
      m.write(train_out);
    } else if (*cal_cmd) {
      AblationMode mode;
      try {
        mode = parse_ablation_mode(cal_mode);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (mode == AblationMode::s12) {
        std::cout << "mode S12 uses no adaptation matrix; nothing to fit\n";
        return 0;
      }
      if (cal_queries.empty()) throw UsageError("--queries is required for modes S123 and S1234");
      if (cal_out.empty()) throw UsageError("--out is required for modes S123 and S1234");
      auto kg = load_graph(cal_graph);
      auto model = EmbeddingModel::load(cal_model);
      check_model_shape(model, kg);
      auto queries = read_query_file(cal_queries, &kg.entities(), &kg.relations());
      NormalizedScorer scorer(model, kg, cc.alpha);
      AdaptReport rep;
      auto w = adapt(scorer, queries, cc, &rep);
      std::cout << "fitted W on " << rep.queries_used << " queries, " << rep.steps << " steps\n";
      for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
        std::cout << "epoch " << e + 1 << " loss " << rep.epoch_loss[e] << '\n';
      }
      w.save(cal_out);
      auto m = start_manifest("calibrate");
      describe_inputs(m, cal_graph);
      m.add_input("input.model", cal_model);
      m.add_input("input.queries", cal_queries);
      m.add("mode", std::string(to_string(mode)));
      m.add("alpha", str(cc.alpha));
      m.add("epochs", str(cc.epochs));
      m.add("lr", str(cc.learning_rate));
      m.add("batch", str(cc.batch_size));
      m.add("seed", str(cc.seed));
      m.add("artifact", cal_out);
      m.write(cal_out);
    } else if (*build_cmd) {
      AblationMode mode;
      try {
        mode = parse_ablation_mode(build_mode);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      auto kg = load_graph(build_graph);
      auto model = EmbeddingModel::load(build_model);
      check_model_shape(model, kg);
      NormalizedScorer scorer(model, kg, build_alpha, false);
      std::unique_ptr<AdaptationMatrix> w;
      if (!build_w.empty()) w = std::make_unique<AdaptationMatrix>(AdaptationMatrix::load(build_w));
      auto provider = ablation_provider(mode, scorer, w.get());
      bo.pin_known = mode == AblationMode::s1234;
      bo.threads = threads;
      CalibratedTensor tensor;
      try {
        tensor = build_tensor(*provider, kg, bo);
      } catch (const MemoryBudgetExceeded& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
      }
      save_tensor(tensor, build_out);
      auto rep = stats(tensor);
      std::cout << "epsilon   " << bo.epsilon << '\n'
                << "nnz       " << rep.nnz << '\n'
                << "total     " << rep.total << '\n'
                << "sparsity  " << std::setprecision(6) << std::fixed << rep.sparsity * 100.0 << "%\n"
                << "bytes     " << rep.bytes << '\n';
      auto m = start_manifest("build-tensor");
      describe_inputs(m, build_graph);
      m.add_input("input.model", build_model);
      if (!build_w.empty()) m.add_input("input.w", build_w);
      m.add("mode", std::string(to_string(mode)));
      m.add("alpha", str(build_alpha));
      m.add("epsilon", str(bo.epsilon));
      m.add("nnz", str(rep.nnz));
      m.add("sparsity", str(rep.sparsity));
      m.add("bytes", str(rep.bytes));
      m.add("artifact", build_out);
      m.write(build_out);
    } else if (*gen_cmd) {
      const auto structures = expand_structures(gen_structures);
      const Split split = parse_split(gen_split);
      auto kg = load_graph(gen_graph);
      std::vector<QueryRecord> all;
      for (const auto& s : structures) {
        auto q = generate_queries(kg, s, gen_count, gen_seed, split, gen_cfg);
        std::cout << s << ": " << q.size() << " queries\n";
        all.insert(all.end(), std::make_move_iterator(q.begin()), std::make_move_iterator(q.end()));
      }
      write_query_file(gen_out, all, &kg.entities(), &kg.relations());
      auto m = start_manifest("gen-queries");
      describe_inputs(m, gen_graph);
      std::string joined;
      for (const auto& s : structures) joined += (joined.empty() ? "" : ",") + s;
      m.add("structures", joined);
      m.add("count", str(gen_count));
      m.add("split", gen_split);
      m.add("seed", str(gen_seed));
      m.add("artifact", gen_out);
      m.write(gen_out);
    } else if (*eval_cmd) {
      if (eval_tensor.empty() == eval_model.empty()) throw UsageError("give exactly one of --tensor or --model");
      auto kg = load_graph(eval_graph);
      auto queries = read_query_file(eval_queries, &kg.entities(), &kg.relations());
      EvalConfig ec;
      ec.threads = threads;
      EvalReport report;
      if (!eval_tensor.empty()) {
        auto tensor = load_tensor(eval_tensor);
        if (tensor.num_entities() != kg.num_entities() || tensor.num_relations() != kg.num_relations()) {
          throw std::runtime_error("tensor shape does not match the graph (check --no-inverse)");
        }
        report = evaluate_run(tensor, queries, ec);
      } else {
        AblationMode mode;
        try {
          mode = parse_ablation_mode(eval_mode);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        auto model = EmbeddingModel::load(eval_model);
        check_model_shape(model, kg);
        NormalizedScorer scorer(model, kg, eval_alpha);
        std::unique_ptr<AdaptationMatrix> w;
        if (!eval_w.empty()) w = std::make_unique<AdaptationMatrix>(AdaptationMatrix::load(eval_w));
        report = evaluate_run(*ablation_provider(mode, scorer, w.get()), queries, ec);
      }
      std::cout << report.table();
      if (!eval_report.empty()) {
        std::ofstream out(eval_report);
        if (!out) throw std::runtime_error("cannot write " + eval_report);
        out << report.key_values();
        out.close();
        auto m = start_manifest("eval");
        describe_inputs(m, eval_graph);
        m.add_input("input.queries", eval_queries);
        if (!eval_tensor.empty()) m.add_input("input.tensor", eval_tensor);
        if (!eval_model.empty()) m.add_input("input.model", eval_model);
        m.add("artifact", eval_report);
        m.write(eval_report);
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
