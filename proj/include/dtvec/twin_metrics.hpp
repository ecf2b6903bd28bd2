#pragma once

// Quality, cost and profit of digital twins, their system-level averages and the
// evaluation metrics (QPUC, PPUQ, AT, AR, ASC, ATC).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dtvec/error.hpp"
#include "json.hpp"

namespace dtvec {

/// One information item uploaded (or attempted) by one vehicle in one slot.
struct DeliveredInfo {
   int info_id = 0;
   int vehicle_id = 0;
   double arrival = 0.0;       // a
   double updating = 0.0;      // u
   double queuing = 0.0;       // q
   double duration = 0.0;      // g; for a dropped upload, the time spent before the drop
   double energy = 0.0;        // joules spent transmitting
   double sensing_cost = 0.0;  // joules spent sensing
};

/// Everything one twin received in one slot. Dropped uploads carry cost but no quality.
struct TwinSnapshot {
   int entity_id = 0;
   std::vector< DeliveredInfo > delivered;
   std::vector< DeliveredInfo > dropped;

   bool counted() const { return !delivered.empty(); }
};

struct MetricWeights {
   double w1 = 0.6;  // timeliness
   double w2 = 0.4;  // consistency
   double w3 = 0.2;  // redundancy
   double w4 = 0.4;  // sensing cost
   double w5 = 0.4;  // transmission cost

   void validate() const {
      for(double w : {w1, w2, w3, w4, w5}) {
         if(!(w >= 0.0 && w <= 1.0)) {
            throw ConfigError("metric weights must lie in [0,1]");
         }
      }
      if(std::abs(w1 + w2 - 1.0) > 1e-9 || std::abs(w3 + w4 + w5 - 1.0) > 1e-9) {
         throw ConfigError("metric weights: w1+w2 and w3+w4+w5 must both equal 1");
      }
   }
};

inline constexpr std::size_t kRawMetricCount = 5;

struct RawTwinMetrics {
   double timeliness = 0.0;         // Θ
   double consistency = 0.0;        // Ψ
   double redundancy = 0.0;         // Ξ
   double sensing_cost = 0.0;       // Φ
   double transmission_cost = 0.0;  // Ω

   std::array< double, kRawMetricCount > values() const {
      return {timeliness, consistency, redundancy, sensing_cost, transmission_cost};
   }
   static RawTwinMetrics from(const std::array< double, kRawMetricCount >& v) {
      return {v[0], v[1], v[2], v[3], v[4]};
   }
};

/// Running per-episode min/max of each raw metric, shared by all twins.
struct NormalizationState {
   std::array< double, kRawMetricCount > min{};
   std::array< double, kRawMetricCount > max{};
   bool seeded = false;
   bool frozen = false;  // when set, observe() leaves the bounds alone
   double epsilon = 1e-3;

   void observe(const RawTwinMetrics& raw) {
      if(frozen) {
         return;
      }
      const auto v = raw.values();
      if(!seeded) {
         min = v;
         max = v;
         seeded = true;
         return;
      }
      for(std::size_t k = 0; k < kRawMetricCount; ++k) {
         min[k] = std::min(min[k], v[k]);
         max[k] = std::max(max[k], v[k]);
      }
   }

   /// Min-max rescaling clamped into [ε, 1-ε]; a zero range maps to the low end.
   double normalize(std::size_t k, double x) const {
      double v = 0.0;
      if(seeded) {
         const double range = max[k] - min[k];
         v = range > 0.0 ? (x - min[k]) / range : 0.0;
      }
      return std::clamp(v, epsilon, 1.0 - epsilon);
   }

   RawTwinMetrics normalize(const RawTwinMetrics& raw) const {
      auto v = raw.values();
      for(std::size_t k = 0; k < kRawMetricCount; ++k) {
         v[k] = normalize(k, v[k]);
      }
      return RawTwinMetrics::from(v);
   }

   void reset() {
      seeded = false;
      min.fill(0.0);
      max.fill(0.0);
   }
};

// ---------------------------------------------------------------------------
// Per-item and per-twin quantities.

inline double info_timeliness(const DeliveredInfo& e) {
   return e.arrival + e.queuing + e.duration - e.updating;
}

/// Sum over contributing vehicles of the stalest item each delivered.
inline double twin_timeliness(const TwinSnapshot& snap) {
   if(snap.delivered.empty()) {
      throw Error("twin_timeliness: empty snapshot");
   }
   std::vector< std::pair< int, double > > per_vehicle;  // first-seen order
   for(const auto& e : snap.delivered) {
      const double theta = info_timeliness(e);
      auto it = std::find_if(per_vehicle.begin(), per_vehicle.end(), [&](const auto& p) {
         return p.first == e.vehicle_id;
      });
      if(it == per_vehicle.end()) {
         per_vehicle.emplace_back(e.vehicle_id, theta);
      } else {
         it->second = std::max(it->second, theta);
      }
   }
   double total = 0.0;
   for(const auto& [vehicle, theta] : per_vehicle) {
      total += theta;
   }
   return total;
}

inline double twin_consistency(const TwinSnapshot& snap) {
   if(snap.delivered.empty()) {
      throw Error("twin_consistency: empty snapshot");
   }
   double lo = snap.delivered.front().updating;
   double hi = lo;
   for(const auto& e : snap.delivered) {
      lo = std::min(lo, e.updating);
      hi = std::max(hi, e.updating);
   }
   return hi - lo;
}

/// Extra delivered copies summed over information types.
inline double twin_redundancy(const TwinSnapshot& snap) {
   std::map< int, int > copies;
   for(const auto& e : snap.delivered) {
      ++copies[e.info_id];
   }
   double total = 0.0;
   for(const auto& [info, n] : copies) {
      total += static_cast< double >(n - 1);
   }
   return total;
}

inline double twin_sensing_cost(const TwinSnapshot& snap) {
   double total = 0.0;
   for(const auto& e : snap.delivered) {
      total += e.sensing_cost;
   }
   for(const auto& e : snap.dropped) {
      total += e.sensing_cost;
   }
   return total;
}

inline double twin_transmission_cost(const TwinSnapshot& snap) {
   double total = 0.0;
   for(const auto& e : snap.delivered) {
      total += e.energy;
   }
   for(const auto& e : snap.dropped) {
      total += e.energy;
   }
   return total;
}

inline RawTwinMetrics raw_metrics(const TwinSnapshot& snap) {
   return {twin_timeliness(snap),
           twin_consistency(snap),
           twin_redundancy(snap),
           twin_sensing_cost(snap),
           twin_transmission_cost(snap)};
}

inline double qdt_from_normalized(double timeliness_hat, double consistency_hat, const MetricWeights& w) {
   return w.w1 * (1.0 - timeliness_hat) + w.w2 * (1.0 - consistency_hat);
}

inline double cdt_from_normalized(
   double redundancy_hat, double sensing_hat, double transmission_hat, const MetricWeights& w) {
   return w.w3 * redundancy_hat + w.w4 * sensing_hat + w.w5 * transmission_hat;
}

/// Quality of the twin under the given bounds; the bounds are not updated.
inline double qdt(const TwinSnapshot& snap, const MetricWeights& w, const NormalizationState& norm) {
   return qdt_from_normalized(
      norm.normalize(0, twin_timeliness(snap)), norm.normalize(1, twin_consistency(snap)), w);
}

inline double cdt(const TwinSnapshot& snap, const MetricWeights& w, const NormalizationState& norm) {
   return cdt_from_normalized(
      norm.normalize(2, twin_redundancy(snap)),
      norm.normalize(3, twin_sensing_cost(snap)),
      norm.normalize(4, twin_transmission_cost(snap)),
      w);
}

inline double pdt(double cdt_value) {
   return 1.0 - cdt_value;
}

// ---------------------------------------------------------------------------
// Slot evaluation and aggregation.

struct TwinRecord {
   int episode = 0;
   int slot = 0;
   int entity_id = 0;
   RawTwinMetrics raw;
   RawTwinMetrics normalized;
   double qdt = 0.0;
   double cdt = 0.0;
   double pdt = 0.0;
};

/// Scores every counted twin of one slot: first widens the bounds with all of them,
/// then normalizes each against the widened bounds.
inline std::vector< TwinRecord > score_slot(
   std::span< const TwinSnapshot > snapshots, const MetricWeights& w, NormalizationState& norm, int slot) {
   std::vector< TwinRecord > out;
   for(const auto& snap : snapshots) {
      if(!snap.counted()) {
         continue;
      }
      TwinRecord r;
      r.slot = slot;
      r.entity_id = snap.entity_id;
      r.raw = raw_metrics(snap);
      out.push_back(r);
   }
   for(const auto& r : out) {
      norm.observe(r.raw);
   }
   for(auto& r : out) {
      r.normalized = norm.normalize(r.raw);
      r.qdt = qdt_from_normalized(r.normalized.timeliness, r.normalized.consistency, w);
      r.cdt = cdt_from_normalized(
         r.normalized.redundancy, r.normalized.sensing_cost, r.normalized.transmission_cost, w);
      r.pdt = pdt(r.cdt);
   }
   return out;
}

struct SystemAggregates {
   double quality = 0.0;  // mean QDT
   double cost = 0.0;     // mean CDT
   double profit = 0.0;   // mean PDT
};

/// Running sums over (slot, twin) pairs.
struct MetricTotals {
   double sum_qdt = 0.0;
   double sum_cdt = 0.0;
   double sum_pdt = 0.0;
   double sum_timeliness = 0.0;
   double sum_redundancy = 0.0;
   double sum_sensing = 0.0;
   double sum_transmission = 0.0;
   std::size_t count = 0;

   void add(const TwinRecord& r) {
      sum_qdt += r.qdt;
      sum_cdt += r.cdt;
      sum_pdt += r.pdt;
      sum_timeliness += r.raw.timeliness;
      sum_redundancy += r.raw.redundancy;
      sum_sensing += r.raw.sensing_cost;
      sum_transmission += r.raw.transmission_cost;
      ++count;
   }

   void add(std::span< const TwinRecord > records) {
      for(const auto& r : records) {
         add(r);
      }
   }
};

inline SystemAggregates system_aggregates(const MetricTotals& totals) {
   if(totals.count == 0) {
      throw NoTwinsError("system_aggregates: no twin was counted");
   }
   const auto n = static_cast< double >(totals.count);
   return {totals.sum_qdt / n, totals.sum_cdt / n, totals.sum_pdt / n};
}

inline SystemAggregates system_aggregates(std::span< const TwinRecord > records) {
   MetricTotals totals;
   totals.add(records);
   return system_aggregates(totals);
}

inline double qpuc(const MetricTotals& totals) {
   if(!(totals.sum_cdt > 0.0)) {
      throw ZeroDenominatorError("qpuc: total CDT is zero");
   }
   return totals.sum_qdt / totals.sum_cdt;
}

inline double ppuq(const MetricTotals& totals) {
   if(!(totals.sum_qdt > 0.0)) {
      throw ZeroDenominatorError("ppuq: total QDT is zero");
   }
   return totals.sum_pdt / totals.sum_qdt;
}

struct AuxiliaryMetrics {
   double average_timeliness = 0.0;         // AT
   double average_redundancy = 0.0;         // AR
   double average_sensing_cost = 0.0;       // ASC
   double average_transmission_cost = 0.0;  // ATC
};

inline AuxiliaryMetrics auxiliary_metrics(const MetricTotals& totals) {
   if(totals.count == 0) {
      return {};
   }
   const auto n = static_cast< double >(totals.count);
   return {totals.sum_timeliness / n,
           totals.sum_redundancy / n,
           totals.sum_sensing / n,
           totals.sum_transmission / n};
}

inline AuxiliaryMetrics auxiliary_metrics(std::span< const TwinRecord > records) {
   MetricTotals totals;
   totals.add(records);
   return auxiliary_metrics(totals);
}

// ---------------------------------------------------------------------------
// Export.

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
   if(std::isnan(v)) {
      return "nan";
   }
   char buf[64];
   auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
   return std::string(buf, ptr);
}

inline void write_metric_csv_header(std::ostream& os) {
   os << "episode,slot,entity_id,timeliness,consistency,redundancy,sensing_cost,transmission_cost,"
         "timeliness_norm,consistency_norm,redundancy_norm,sensing_cost_norm,"
         "transmission_cost_norm,qdt,cdt,pdt\n";
}

inline void write_metric_csv_rows(std::ostream& os, std::span< const TwinRecord > records) {
   for(const auto& r : records) {
      os << r.episode << ',' << r.slot << ',' << r.entity_id;
      for(double v : r.raw.values()) {
         os << ',' << format_double(v);
      }
      for(double v : r.normalized.values()) {
         os << ',' << format_double(v);
      }
      os << ',' << format_double(r.qdt) << ',' << format_double(r.cdt) << ','
         << format_double(r.pdt) << '\n';
   }
}

/// Summary object: aggregates, the two tradeoff metrics and the four averages.
/// Ratios whose denominator vanished are reported as null.
inline nlohmann::ordered_json metric_summary_json(const MetricTotals& totals) {
   nlohmann::ordered_json j;
   j["twin_slots"] = totals.count;
   if(totals.count > 0) {
      auto agg = system_aggregates(totals);
      j["system_quality"] = agg.quality;
      j["system_cost"] = agg.cost;
      j["system_profit"] = agg.profit;
   } else {
      j["system_quality"] = nullptr;
      j["system_cost"] = nullptr;
      j["system_profit"] = nullptr;
   }
   j["qpuc"] = totals.sum_cdt > 0.0 ? nlohmann::ordered_json(qpuc(totals)) : nlohmann::ordered_json();
   j["ppuq"] = totals.sum_qdt > 0.0 ? nlohmann::ordered_json(ppuq(totals)) : nlohmann::ordered_json();
   const auto aux = auxiliary_metrics(totals);
   j["at"] = aux.average_timeliness;
   j["ar"] = aux.average_redundancy;
   j["asc"] = aux.average_sensing_cost;
   j["atc"] = aux.average_transmission_cost;
   return j;
}

}  // namespace dtvec
