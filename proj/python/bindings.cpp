#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>

#include "llmoe/backtest.hpp"
#include "llmoe/experts.hpp"
#include "llmoe/features.hpp"
#include "llmoe/market_data.hpp"
#include "llmoe/pipeline.hpp"
#include "llmoe/router.hpp"

namespace py = pybind11;
using namespace llmoe;

namespace {

std::vector<RouterDecision> decisions_from_labels(
    const std::vector<WindowSample>& samples,
    const std::vector<std::string>& labels) {
  if (labels.size() != samples.size()) {
    throw std::invalid_argument("labels must align 1:1 with samples");
  }
  std::vector<RouterDecision> decisions;
  decisions.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    RouterDecision d;
    d.anchor_date = samples[i].anchor_date;
    const auto label = router_label_from_string(labels[i]);
    if (!label) {
      throw std::invalid_argument("label must be Optimistic or Pessimistic, got " +
                                  labels[i]);
    }
    d.label = *label;
    d.source = DecisionSource::rule;
    d.model_id = "external";
    decisions.push_back(std::move(d));
  }
  return decisions;
}

TrainConfig::Optimizer optimizer_from_string(const std::string& name) {
  if (name == "adam") return TrainConfig::Optimizer::adam;
  if (name == "sgd") return TrainConfig::Optimizer::sgd;
  throw std::invalid_argument("optimizer must be adam or sgd");
}

py::dict report_to_dict(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? py::cast(*v) : py::none().cast<py::object>();
  };
  py::dict out;
  out["tr"] = r.tr;
  out["vol"] = opt(r.vol);
  out["sr"] = opt(r.sr);
  out["sor"] = opt(r.sor);
  out["mdd"] = r.mdd;
  out["cr"] = opt(r.cr);
  out["dd"] = opt(r.dd);
  return out;
}

}  // namespace

PYBIND11_MODULE(llmoe, m) {
  m.doc() = "mixture-of-experts stock movement pipeline";

  py::class_<RegimeSpec>(m, "RegimeSpec")
      .def(py::init<>())
      .def_readwrite("drift_optimistic", &RegimeSpec::drift_optimistic)
      .def_readwrite("drift_pessimistic", &RegimeSpec::drift_pessimistic)
      .def_readwrite("vol_optimistic", &RegimeSpec::vol_optimistic)
      .def_readwrite("vol_pessimistic", &RegimeSpec::vol_pessimistic)
      .def_readwrite("stay_prob", &RegimeSpec::stay_prob)
      .def_readwrite("no_news_fraction", &RegimeSpec::no_news_fraction)
      .def_readwrite("headline_match_prob", &RegimeSpec::headline_match_prob)
      .def_readwrite("start_price", &RegimeSpec::start_price)
      .def_readwrite("symbol", &RegimeSpec::symbol);

  py::class_<MarketSeries>(m, "MarketSeries")
      .def_readonly("symbol", &MarketSeries::symbol)
      .def("__len__", [](const MarketSeries& s) { return s.bars.size(); })
      .def("dates",
           [](const MarketSeries& s) {
             std::vector<std::string> out;
             out.reserve(s.bars.size());
             for (const auto& bar : s.bars) out.push_back(format_date(bar.date));
             return out;
           })
      .def("save", [](const MarketSeries& s, const std::string& prices,
                      const std::optional<std::string>& news) {
        save_series(s, prices, news);
      }, py::arg("prices"), py::arg("news") = std::nullopt);

  m.def(
      "generate_synthetic",
      [](std::uint64_t seed, int days, const RegimeSpec& spec) {
        auto synthetic = generate_synthetic_series(seed, days, spec);
        return py::make_tuple(synthetic.series, synthetic.regimes);
      },
      py::arg("seed"), py::arg("days"), py::arg("spec") = RegimeSpec{},
      "Two-regime synthetic series; returns (series, regime per bar).");

  m.def(
      "load_series",
      [](const std::string& prices, const std::optional<std::string>& news,
         const std::string& symbol) {
        auto loaded = load_series(prices, news, symbol);
        return py::make_tuple(loaded.series, loaded.unmatched_news);
      },
      py::arg("prices"), py::arg("news") = std::nullopt,
      py::arg("symbol") = "SERIES",
      "Returns (series, count of news rows without a price bar).");

  py::class_<WindowSample>(m, "WindowSample")
      .def_property_readonly(
          "anchor_date",
          [](const WindowSample& s) { return format_date(s.anchor_date); })
      .def_property_readonly(
          "vector",
          [](const WindowSample& s) {
            return std::vector<double>(s.vector.begin(), s.vector.end());
          })
      .def_property_readonly(
          "window_texts",
          [](const WindowSample& s) {
            return std::vector<std::string>(s.window_texts.begin(),
                                            s.window_texts.end());
          })
      .def_readonly("label", &WindowSample::label)
      .def_readonly("next_return", &WindowSample::next_return);

  m.def("build_window_samples", &build_window_samples, py::arg("series"));
  m.def("build_prompt", &build_prompt, py::arg("sample"));
  m.def(
      "parse_decision",
      [](const std::string& raw) -> py::object {
        const auto parsed = parse_decision(raw);
        if (!parsed) return py::none();
        return py::make_tuple(to_string(parsed->label), parsed->reasoning);
      },
      py::arg("raw_response"),
      "Returns (label, reasoning) or None when no label is present.");
  m.def(
      "rule_label",
      [](const WindowSample& sample) {
        RuleRouter router;
        const auto d = router.route(sample);
        return py::make_tuple(to_string(d.label), d.reasoning);
      },
      py::arg("sample"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double learning_rate, int batch_size, int epochs,
                       const std::string& optimizer, std::uint64_t seed,
                       int early_stop_patience) {
             TrainConfig cfg;
             cfg.learning_rate = learning_rate;
             cfg.batch_size = batch_size;
             cfg.epochs = epochs;
             cfg.optimizer = optimizer_from_string(optimizer);
             cfg.seed = seed;
             cfg.early_stop_patience = early_stop_patience;
             return cfg;
           }),
           py::arg("learning_rate") = 1e-3, py::arg("batch_size") = 32,
           py::arg("epochs") = 100, py::arg("optimizer") = "adam",
           py::arg("seed") = 0, py::arg("early_stop_patience") = 0)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("early_stop_patience", &TrainConfig::early_stop_patience);

  py::class_<ExpertNet>(m, "ExpertNet")
      .def("parameter_count", &ExpertNet::parameter_count)
      .def("predict",
           [](const ExpertNet& net, const std::vector<double>& x) {
             if (x.size() != kWindowVectorSize) {
               throw std::invalid_argument("input must have 55 values");
             }
             std::array<double, 55> arr{};
             std::copy(x.begin(), x.end(), arr.begin());
             return predict(net, arr);
           },
           py::arg("x"))
      .def("save",
           [](const ExpertNet& net, const std::string& path) {
             save_checkpoint(net, path);
           },
           py::arg("path"))
      .def_static("load",
                  [](const std::string& path) { return load_checkpoint(path); },
                  py::arg("path"));

  m.def("train_single_mlp", &train_single_mlp, py::arg("samples"),
        py::arg("config"));

  py::class_<LlmoePolicy>(m, "LlmoePolicy")
      .def_readonly("optimistic_fell_back", &LlmoePolicy::optimistic_fell_back)
      .def_readonly("pessimistic_fell_back", &LlmoePolicy::pessimistic_fell_back);

  m.def(
      "train_llmoe",
      [](const std::vector<WindowSample>& samples,
         const std::vector<std::string>& labels, const TrainConfig& config,
         int min_partition_size) {
        return train_llmoe(samples, decisions_from_labels(samples, labels),
                           config, min_partition_size);
      },
      py::arg("samples"), py::arg("labels"), py::arg("config"),
      py::arg("min_partition_size") = 30,
      "labels: one of Optimistic/Pessimistic per sample.");

  m.def(
      "llmoe_predictions",
      [](const LlmoePolicy& policy, const std::vector<WindowSample>& samples,
         const std::vector<std::string>& labels) {
        const auto preds =
            infer_llmoe(policy, samples, decisions_from_labels(samples, labels));
        py::list out;
        for (const auto& p : preds) {
          out.append(py::make_tuple(format_date(p.anchor_date), p.up,
                                    p.probability));
        }
        return out;
      },
      py::arg("policy"), py::arg("samples"), py::arg("labels"),
      "Returns [(anchor_date, up, probability)] per sample.");

  m.def(
      "mlp_predictions",
      [](const ExpertNet& net, const std::vector<WindowSample>& samples) {
        const auto preds = infer_single_mlp(net, samples);
        py::list out;
        for (const auto& p : preds) {
          out.append(py::make_tuple(format_date(p.anchor_date), p.up,
                                    p.probability));
        }
        return out;
      },
      py::arg("net"), py::arg("samples"));

  m.def(
      "simulate",
      [](const std::vector<bool>& predicted_up,
         const std::vector<double>& realized_returns,
         const std::vector<std::string>& anchor_dates, double initial_value) {
        std::vector<Date> dates;
        dates.reserve(anchor_dates.size());
        for (const auto& d : anchor_dates) dates.push_back(parse_date(d));
        const auto sim = simulate_all_in_all_out(predicted_up, realized_returns,
                                                 dates, initial_value);
        auto metrics = report_to_dict(
            compute_metrics(sim.curve, sim.strategy_returns));
        py::list equity;
        for (const auto& point : sim.curve.points) {
          equity.append(py::make_tuple(format_date(point.date), point.value));
        }
        py::dict out;
        out["metrics"] = metrics;
        out["equity"] = equity;
        return out;
      },
      py::arg("predicted_up"), py::arg("realized_returns"),
      py::arg("anchor_dates"), py::arg("initial_value") = 1.0,
      "All-in/all-out backtest; returns {'metrics': ..., 'equity': ...}.");
}
