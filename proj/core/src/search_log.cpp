#include "compactnet/search.hpp"

namespace compactnet {

nlohmann::ordered_json to_json(const TargetSchedule& s) {
  nlohmann::ordered_json doc;
  doc["original_latency_us"] = s.original_latency_us;
  doc["t_init"] = s.t_init;
  doc["raw_subtargets"] = s.raw_subtargets;
  doc["increments"] = s.increments;
  doc["cumulative_factors"] = s.cumulative_factors;
  doc["latency_budgets"] = s.latency_budgets;
  return doc;
}

TargetSchedule target_schedule_from_json(const nlohmann::json& doc) {
  try {
    TargetSchedule s;
    s.original_latency_us = doc.at("original_latency_us").get<double>();
    s.t_init = doc.at("t_init").get<double>();
    s.raw_subtargets = doc.at("raw_subtargets").get<std::vector<double>>();
    s.increments = doc.at("increments").get<std::vector<double>>();
    s.cumulative_factors =
        doc.at("cumulative_factors").get<std::vector<double>>();
    s.latency_budgets = doc.at("latency_budgets").get<std::vector<double>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad schedule: ") + e.what());
  }
}

namespace {

nlohmann::ordered_json to_json(const CandidateRecord& c) {
  nlohmann::ordered_json doc;
  doc["slot"] = c.slot_id;
  doc["kept"] = c.kept;
  doc["latency_us"] = c.latency_us;
  doc["accuracy"] = c.accuracy;
  doc["feasible"] = c.feasible;
  doc["selected"] = c.selected;
  return doc;
}

nlohmann::ordered_json to_json(const IterationRecord& it) {
  nlohmann::ordered_json doc;
  doc["iteration"] = it.iteration;
  doc["budget_us"] = it.budget_us;
  doc["cumulative_factor"] = it.cumulative_factor;
  doc["selected_slot"] = it.selected_slot;
  doc["filter_counts"] = it.filter_counts;
  doc["latency_us"] = it.latency_us;
  doc["accuracy"] = it.accuracy;
  auto candidates = nlohmann::ordered_json::array();
  for (const auto& c : it.candidates) candidates.push_back(to_json(c));
  doc["candidates"] = std::move(candidates);
  return doc;
}

}  // namespace

nlohmann::ordered_json to_json(const SearchLog& log) {
  nlohmann::ordered_json doc;
  doc["schedule"] = to_json(log.schedule);
  doc["pretrained_accuracy"] = log.pretrained_accuracy;
  doc["original_filter_counts"] = log.original_filter_counts;
  auto iterations = nlohmann::ordered_json::array();
  for (const auto& it : log.iterations) iterations.push_back(to_json(it));
  doc["iterations"] = std::move(iterations);
  doc["completed"] = log.completed;
  doc["final_latency_us"] = log.final_latency_us;
  doc["final_accuracy"] = log.final_accuracy;
  return doc;
}

SearchLog search_log_from_json(const nlohmann::json& doc) {
  try {
    SearchLog log;
    log.schedule = target_schedule_from_json(doc.at("schedule"));
    log.pretrained_accuracy = doc.at("pretrained_accuracy").get<double>();
    log.original_filter_counts =
        doc.at("original_filter_counts").get<std::vector<int>>();
    for (const auto& it_doc : doc.at("iterations")) {
      IterationRecord it;
      it.iteration = it_doc.at("iteration").get<int>();
      it.budget_us = it_doc.at("budget_us").get<double>();
      it.cumulative_factor = it_doc.at("cumulative_factor").get<double>();
      it.selected_slot = it_doc.at("selected_slot").get<int>();
      it.filter_counts = it_doc.at("filter_counts").get<std::vector<int>>();
      it.latency_us = it_doc.at("latency_us").get<double>();
      it.accuracy = it_doc.at("accuracy").get<double>();
      for (const auto& c_doc : it_doc.at("candidates")) {
        CandidateRecord c;
        c.slot_id = c_doc.at("slot").get<int>();
        c.kept = c_doc.at("kept").get<std::vector<int>>();
        c.latency_us = c_doc.at("latency_us").get<double>();
        c.accuracy = c_doc.at("accuracy").get<double>();
        c.feasible = c_doc.at("feasible").get<bool>();
        c.selected = c_doc.at("selected").get<bool>();
        it.candidates.push_back(std::move(c));
      }
      log.iterations.push_back(std::move(it));
    }
    log.completed = doc.at("completed").get<bool>();
    log.final_latency_us = doc.at("final_latency_us").get<double>();
    log.final_accuracy = doc.at("final_accuracy").get<double>();
    return log;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad search log: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const CrossReport& report) {
  nlohmann::ordered_json doc;
  doc["platforms"] = {report.names[0], report.names[1]};
  auto matrix = nlohmann::ordered_json::array();
  for (int p = 0; p < 2; ++p) {
    matrix.push_back({report.speedup[p][0], report.speedup[p][1]});
  }
  doc["speedup"] = std::move(matrix);
  doc["filters"] = {report.filters[0], report.filters[1]};
  doc["accuracy"] = {report.accuracy[0], report.accuracy[1]};
  doc["logs"] = {to_json(report.logs[0]), to_json(report.logs[1])};
  return doc;
}

}  // namespace compactnet
