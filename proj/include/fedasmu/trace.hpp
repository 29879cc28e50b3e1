#pragma once

#include <ostream>

#include <json.hpp>

#include "fedasmu/sim_engine.hpp"
#include "fedasmu/slot_selector.hpp"

namespace fedasmu {

inline nlohmann::json to_json(const AggregationRecord &r) {
  return {{"time", r.time},           {"device", r.device},     {"t", r.t},
          {"o", r.o},                 {"staleness", r.staleness}, {"accepted", r.accepted},
          {"buffered", r.buffered},   {"alpha", r.alpha},       {"lambda", r.lambda},
          {"sigma", r.sigma},         {"iota", r.iota},         {"new_version", r.new_version}};
}

inline nlohmann::json to_json(const DeviceRoundRecord &r) {
  nlohmann::json j = {{"device", r.device},
                      {"round", r.round},
                      {"start_time", r.start_time},
                      {"upload_time", r.upload_time},
                      {"o", r.o},
                      {"requested", r.requested},
                      {"merged", r.trace.merged},
                      {"merges", r.merges}};
  if (r.requested) {
    j["l_star"] = r.l_star;
    j["source"] = to_string(r.source);
    j["request_time"] = r.request_time;
    j["response_time"] = r.response_time;
  }
  if (r.trace.merged) {
    j["merge_epoch"] = r.trace.merge_epoch;
    j["g"] = r.trace.g;
    j["staleness"] = r.trace.staleness;
    j["beta"] = r.trace.beta;
    j["reward"] = r.trace.reward;
    j["loss_before"] = r.trace.loss_before;
    j["loss_after"] = r.trace.loss_after;
  }
  return j;
}

/// One JSON object per line.
template <class Records> void write_jsonl(std::ostream &os, const Records &records) {
  for (const auto &r : records)
    os << to_json(r).dump() << '\n';
}

/// Meta-policy weights, per-device Q tables and control parameters.
inline nlohmann::json selector_dump(const SimulationResult &res) {
  nlohmann::json j;
  j["meta_policy"] = {{"hidden", res.meta.hidden()},
                      {"params", std::vector<double>(res.meta.theta().begin(), res.meta.theta().end())}};
  auto &devices = j["devices"] = nlohmann::json::array();
  for (std::size_t i = 0; i < res.q_tables.size(); ++i) {
    nlohmann::json d;
    d["device"] = i;
    const auto &q = res.q_tables[i];
    if (q.max_epochs() >= 2) {
      auto &rows = d["q"] = nlohmann::json::array();
      for (std::uint32_t s = 1; s <= q.max_slot(); ++s)
        rows.push_back({q.at(s, SlotAction::add), q.at(s, SlotAction::stay),
                        q.at(s, SlotAction::minus)});
    }
    const auto &c = res.device_controls[i];
    d["gamma"] = c.gamma;
    d["upsilon"] = c.upsilon;
    d["baseline"] = c.baseline;
    const auto &s = res.server_records[i];
    d["lambda"] = s.lambda;
    d["sigma"] = s.sigma;
    d["iota"] = s.iota;
    devices.push_back(std::move(d));
  }
  return j;
}

} // namespace fedasmu
