#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedblock/domain.hpp"
#include "fedblock/embedding.hpp"
#include "fedblock/errors.hpp"
#include "fedblock/fedsim.hpp"
#include "fedblock/filterlists.hpp"
#include "fedblock/mlp.hpp"
#include "fedblock/rng.hpp"

namespace py = pybind11;
using namespace fedblock;

namespace {

const char* kind_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::DomainBlock:
      return "domain_block";
    case RuleKind::DomainAllow:
      return "domain_allow";
    case RuleKind::ElementOrOption:
      return "element_or_option";
    case RuleKind::Comment:
      return "comment";
    case RuleKind::Invalid:
      return "invalid";
  }
  return "invalid";
}

std::vector<LayerSpec> make_arch(std::size_t input_width, const std::vector<std::size_t>& hidden) {
  std::vector<LayerSpec> arch{{input_width, Activation::None}};
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    arch.push_back({hidden[i], i == 1 ? Activation::SeLU : Activation::ReLU});
  }
  arch.push_back({1, Activation::Sigmoid});
  return arch;
}

std::vector<Instance> make_instances(const std::vector<std::vector<double>>& features,
                                     const std::vector<int>& labels) {
  if (features.size() != labels.size()) {
    throw py::value_error("features and labels must have the same length");
  }
  std::vector<Instance> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw py::value_error("labels must be 0 or 1");
    Instance inst;
    inst.features = features[i];
    inst.label = labels[i];
    inst.domain = *DomainName::parse("row-" + std::to_string(i) + ".local");
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Example> view_examples(const std::vector<Instance>& instances) {
  std::vector<Example> out;
  out.reserve(instances.size());
  for (const Instance& inst : instances) out.push_back({inst.features, inst.label});
  return out;
}

py::dict metrics_dict(const MetricsReport& report) {
  py::dict out;
  out["accuracy"] = report.accuracy;
  out["roc_auc"] = report.roc_auc;
  out["f1"] = report.f1;
  out["tp"] = report.tp;
  out["fp"] = report.fp;
  out["tn"] = report.tn;
  out["fn"] = report.fn;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "federated domain-blocking core";

  py::register_exception<Error>(m, "FedblockError");

  m.def(
      "normalize_domain",
      [](const std::string& text) -> py::object {
        auto parsed = DomainName::parse(text);
        if (!parsed) return py::none();
        return py::str(parsed->str());
      },
      py::arg("text"), "Normalized FQDN, or None when the text is not a valid domain.");

  m.def(
      "parse_rule",
      [](const std::string& line, const std::string& syntax) {
        const FilterRule rule = parse_rule(line, std::string_view(syntax));
        py::dict out;
        out["raw"] = rule.raw;
        out["kind"] = kind_name(rule.kind);
        out["domain"] = rule.domain ? py::object(py::str(rule.domain->str())) : py::none();
        return out;
      },
      py::arg("line"), py::arg("syntax"),
      "Parse one filter-list line under the grammar resolved from the syntax tag.");

  m.def(
      "categorize_list",
      [](const std::string& title, const std::string& description) {
        FilterListMeta meta;
        meta.title = title;
        meta.description = description;
        const KeywordSets kw = default_keywords();
        switch (categorize_list(meta, kw.iot, kw.mobile)) {
          case ListCategory::IoT:
            return "iot";
          case ListCategory::Mobile:
            return "mobile";
          case ListCategory::Rejected:
            break;
        }
        return "rejected";
      },
      py::arg("title"), py::arg("description") = "");

  m.def(
      "canonicalize_domains",
      [](const std::vector<std::string>& names) {
        AssociatedDomains assoc;
        for (const std::string& name : names) {
          if (auto d = DomainName::parse(name)) assoc.names.insert(std::move(*d));
        }
        return canonicalize_domains(assoc);
      },
      py::arg("names"));

  py::class_<HashEmbedder>(m, "HashEmbedder")
      .def(py::init<std::size_t>(), py::arg("dim") = kDefaultEmbeddingDim)
      .def_property_readonly("dim", &HashEmbedder::dim)
      .def(
          "embed",
          [](const HashEmbedder& self, const std::string& text) {
            EmbedderOutput out = self.embed(text);
            return py::make_tuple(out.vector, out.has_unknown_tokens);
          },
          py::arg("text"), "Returns (vector, has_unknown_tokens).");

  m.def(
      "embed_whois_lines",
      [](const std::vector<std::string>& lines, const HashEmbedder& embedder) {
        WhoisLog log;
        log.lines = lines;
        return embed_whois(log, embedder).vector;
      },
      py::arg("lines"), py::arg("embedder"),
      "Per-line embeddings (512-character truncation) averaged over the log.");

  py::class_<ModelParams>(m, "Model")
      .def_static(
          "init",
          [](std::size_t input_width, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
            return init_params(make_arch(input_width, hidden), seed);
          },
          py::arg("input_width"), py::arg("hidden") = std::vector<std::size_t>{416, 32},
          py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return ModelParams::load(path); },
                  py::arg("path"))
      .def("save", [](const ModelParams& self, const std::string& path) { self.save(path); },
           py::arg("path"))
      .def_property_readonly("input_width", &ModelParams::input_width)
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def(
          "forward",
          [](const ModelParams& self, const std::vector<double>& features) {
            return forward(self, features);
          },
          py::arg("features"), "Probability of label 1 (non-malicious).");

  m.def(
      "train_model",
      [](ModelParams model, const std::vector<std::vector<double>>& features,
         const std::vector<int>& labels, std::size_t epochs, double learning_rate,
         std::size_t batch_size, std::uint64_t seed) {
        const auto instances = make_instances(features, labels);
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = learning_rate;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        TrainResult result = train(std::move(model), view_examples(instances), cfg);
        return py::make_tuple(std::move(result.params), result.loss_curve);
      },
      py::arg("model"), py::arg("features"), py::arg("labels"), py::arg("epochs") = 5,
      py::arg("learning_rate") = 0.01, py::arg("batch_size") = 32, py::arg("seed") = 0,
      "SGD training; returns (model, per-epoch mean loss).");

  m.def(
      "evaluate_model",
      [](const ModelParams& model, const std::vector<std::vector<double>>& features,
         const std::vector<int>& labels, double threshold) {
        const auto instances = make_instances(features, labels);
        return metrics_dict(evaluate(model, view_examples(instances), threshold));
      },
      py::arg("model"), py::arg("features"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        return roc_auc(scores, labels);
      },
      py::arg("scores"), py::arg("labels"),
      "Rank-based AUC with ties counted one half; exact all-pairs semantics.");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::vector<std::vector<double>>& pool_features,
         const std::vector<int>& pool_labels, const std::vector<std::vector<double>>& test_features,
         const std::vector<int>& test_labels) {
        const ExperimentConfig config = experiment_config_from_json(config_json);
        const auto pool = make_instances(pool_features, pool_labels);
        const auto test_set = make_instances(test_features, test_labels);
        const ExperimentReport report = run_experiment(config, pool, test_set);
        const SystemComparison cmp = compare_systems(report);
        auto winner = [](Winner w) {
          return w == Winner::A ? "finetuned" : (w == Winner::B ? "other" : "tie");
        };
        py::dict out;
        out["central_test_accuracy"] = report.central_test_accuracy;
        out["private_test"] = py::make_tuple(report.private_test.mean, report.private_test.stddev);
        out["finetuned_test"] =
            py::make_tuple(report.finetuned_test.mean, report.finetuned_test.stddev);
        out["finetuned_local"] =
            py::make_tuple(report.finetuned_local.mean, report.finetuned_local.stddev);
        out["central_local"] =
            py::make_tuple(report.central_local.mean, report.central_local.stddev);
        out["loss_improvement"] = report.loss_improvement;
        out["finetuned_vs_private_test"] = winner(cmp.finetuned_vs_private_test);
        out["finetuned_vs_central_test"] = winner(cmp.finetuned_vs_central_test);
        out["finetuned_vs_central_local"] = winner(cmp.finetuned_vs_central_local);
        out["csv_row"] = report_csv_row(0, report);
        return out;
      },
      py::arg("config_json"), py::arg("pool_features"), py::arg("pool_labels"),
      py::arg("test_features"), py::arg("test_labels"),
      "One federated experiment; the config JSON mirrors the CLI experiment config.");

  m.def("default_experiment_config", [] {
    return experiment_config_to_json(ExperimentConfig{});
  });

  m.attr("__version__") = "0.1.0";
}
