#include <gtest/gtest.h>

#include <sstream>

#include "dtvec/twin_metrics.hpp"

using namespace dtvec;

namespace {

DeliveredInfo item(int info, int vehicle, double a, double u, double q = 0.0, double g = 0.0) {
   DeliveredInfo d;
   d.info_id = info;
   d.vehicle_id = vehicle;
   d.arrival = a;
   d.updating = u;
   d.queuing = q;
   d.duration = g;
   return d;
}

NormalizationState bounds(std::array< double, 5 > lo, std::array< double, 5 > hi) {
   NormalizationState n;
   n.observe(RawTwinMetrics::from(lo));
   n.observe(RawTwinMetrics::from(hi));
   return n;
}

}  // namespace

TEST(Timeliness, PerItem) {
   EXPECT_DOUBLE_EQ(info_timeliness(item(0, 0, 3.0, 2.0, 0.5, 0.2)), 1.7);
   EXPECT_EQ(info_timeliness(item(0, 0, 4.0, 4.0)), 0.0);
}

TEST(Timeliness, MaxPerVehicleThenSum) {
   TwinSnapshot one{0, {item(0, 1, 3.0, 2.0, 0.5, 0.2), item(1, 1, 2.0, 1.6)}, {}};
   EXPECT_DOUBLE_EQ(twin_timeliness(one), 1.7);
   TwinSnapshot two{0, {item(0, 1, 3.0, 2.0, 0.5, 0.2), item(1, 2, 2.0, 0.0)}, {}};
   EXPECT_DOUBLE_EQ(twin_timeliness(two), 3.7);
   EXPECT_THROW(twin_timeliness(TwinSnapshot{}), Error);
}

TEST(Consistency, Spread) {
   TwinSnapshot s{0, {item(0, 0, 6.0, 2.0)}, {}};
   EXPECT_EQ(twin_consistency(s), 0.0);
   s.delivered.push_back(item(1, 0, 6.0, 6.0));
   s.delivered.push_back(item(2, 1, 6.0, 3.0));
   EXPECT_EQ(twin_consistency(s), 4.0);
   s.delivered.push_back(item(3, 1, 6.0, 5.0));
   EXPECT_EQ(twin_consistency(s), 4.0);
}

TEST(Costs, RedundancySensingTransmission) {
   TwinSnapshot s;
   EXPECT_EQ(twin_redundancy(s), 0.0);
   EXPECT_EQ(twin_sensing_cost(s), 0.0);
   EXPECT_EQ(twin_transmission_cost(s), 0.0);
   // copies {1, 3, 2}
   for(auto [info, v] : std::vector< std::pair< int, int > >{{0, 0}, {1, 0}, {1, 1}, {1, 2}, {2, 0}, {2, 1}}) {
      s.delivered.push_back(item(info, v, 1.0, 0.0));
   }
   EXPECT_EQ(twin_redundancy(s), 3.0);
   TwinSnapshot c;
   c.delivered = {item(0, 0, 1, 0), item(1, 0, 1, 0)};
   c.delivered[0].sensing_cost = 0.2;
   c.delivered[1].sensing_cost = 0.3;
   c.delivered[0].energy = 0.05;
   c.delivered[1].energy = 0.1;
   EXPECT_DOUBLE_EQ(twin_sensing_cost(c), 0.5);
   EXPECT_DOUBLE_EQ(twin_transmission_cost(c), 0.15000000000000002);
   // Dropped uploads cost but add no redundancy.
   c.dropped.push_back(item(0, 1, 1, 0));
   c.dropped.back().sensing_cost = 0.1;
   c.dropped.back().energy = 0.02;
   EXPECT_EQ(twin_redundancy(c), 0.0);
   EXPECT_DOUBLE_EQ(twin_sensing_cost(c), 0.6);
   EXPECT_NEAR(twin_transmission_cost(c), 0.17, 1e-15);
}

TEST(Quality, HandValues) {
   MetricWeights w;
   EXPECT_DOUBLE_EQ(qdt_from_normalized(0.5, 0.25, w), 0.6);
   EXPECT_DOUBLE_EQ(cdt_from_normalized(1.0, 0.0, 0.0, w), 0.2);
   EXPECT_DOUBLE_EQ(cdt_from_normalized(0.5, 0.5, 0.5, w), 0.5);
   EXPECT_DOUBLE_EQ(pdt(0.2), 0.8);
   EXPECT_EQ(pdt(0.0), 1.0);
   EXPECT_EQ(pdt(1.0), 0.0);
}

TEST(Normalization, ClampsIntoOpenInterval) {
   auto n = bounds({0, 0, 0, 0, 0}, {2, 4, 1, 1, 1});
   EXPECT_DOUBLE_EQ(n.normalize(0, 1.0), 0.5);
   EXPECT_DOUBLE_EQ(n.normalize(1, 1.0), 0.25);
   EXPECT_DOUBLE_EQ(n.normalize(0, 0.0), 1e-3);
   EXPECT_DOUBLE_EQ(n.normalize(0, 9.0), 1.0 - 1e-3);
   NormalizationState flat;
   flat.observe(RawTwinMetrics::from({1, 1, 1, 1, 1}));
   EXPECT_DOUBLE_EQ(flat.normalize(2, 1.0), 1e-3);
   NormalizationState empty;
   EXPECT_DOUBLE_EQ(empty.normalize(0, 5.0), 1e-3);
}

TEST(Normalization, FrozenIgnoresObservations) {
   auto n = bounds({0, 0, 0, 0, 0}, {1, 1, 1, 1, 1});
   n.frozen = true;
   n.observe(RawTwinMetrics::from({5, 5, 5, 5, 5}));
   EXPECT_EQ(n.max[0], 1.0);
}

TEST(Quality, MonotoneUnderFixedBounds) {
   auto n = bounds({0, 0, 0, 0, 0}, {10, 10, 5, 5, 5});
   MetricWeights w;
   TwinSnapshot s{0, {item(0, 0, 3.0, 2.0, 0.5, 0.2), item(1, 0, 3.0, 1.0)}, {}};
   double prev = qdt(s, w, n);
   for(int k = 0; k < 5; ++k) {
      s.delivered[0].queuing += 0.7;
      const double now = qdt(s, w, n);
      EXPECT_LE(now, prev);
      EXPECT_GT(now, 0.0);
      EXPECT_LT(now, 1.0);
      prev = now;
   }
   double c_prev = cdt(s, w, n);
   for(int k = 0; k < 5; ++k) {
      s.delivered[1].sensing_cost += 0.4;
      const double c = cdt(s, w, n);
      EXPECT_GE(c, c_prev);
      c_prev = c;
   }
}

TEST(ScoreSlot, WidensBoundsThenScores) {
   MetricWeights w;
   NormalizationState n;
   std::vector< TwinSnapshot > snaps(3);
   snaps[0] = {0, {item(0, 0, 3.0, 2.0, 0.1, 0.2)}, {}};
   snaps[1] = {1, {}, {}};
   snaps[2] = {2, {item(0, 0, 3.0, 2.0, 0.1, 0.2), item(1, 1, 3.0, 0.0, 0.0, 0.5)}, {}};
   auto recs = score_slot(snaps, w, n, 4);
   ASSERT_EQ(recs.size(), 2u);
   EXPECT_EQ(recs[0].entity_id, 0);
   EXPECT_EQ(recs[1].entity_id, 2);
   EXPECT_EQ(recs[1].slot, 4);
   EXPECT_TRUE(n.seeded);
   // Entity 0 has the lowest timeliness and consistency of the slot.
   EXPECT_DOUBLE_EQ(recs[0].normalized.timeliness, 1e-3);
   EXPECT_DOUBLE_EQ(recs[1].normalized.timeliness, 1.0 - 1e-3);
   for(const auto& r : recs) {
      EXPECT_DOUBLE_EQ(r.pdt, 1.0 - r.cdt);
   }
}

TEST(Aggregates, MeansAndRatios) {
   std::vector< TwinRecord > recs(2);
   recs[0].qdt = 0.6;
   recs[0].cdt = 0.3;
   recs[0].pdt = 0.7;
   recs[1].qdt = 0.8;
   recs[1].cdt = 0.1;
   recs[1].pdt = 0.9;
   recs[0].raw = {1.0, 0.0, 0.0, 0.2, 0.4};
   recs[1].raw = {3.0, 0.0, 0.0, 0.4, 0.6};
   auto agg = system_aggregates(recs);
   EXPECT_DOUBLE_EQ(agg.quality, 0.7);
   EXPECT_NEAR(agg.profit, 1.0 - agg.cost, 1e-15);
   MetricTotals t;
   t.add(recs);
   EXPECT_NEAR(qpuc(t), 1.4 / 0.4, 1e-12);
   EXPECT_NEAR(ppuq(t), 1.6 / 1.4, 1e-12);
   auto aux = auxiliary_metrics(t);
   EXPECT_DOUBLE_EQ(aux.average_timeliness, 2.0);
   EXPECT_EQ(aux.average_redundancy, 0.0);
   EXPECT_NEAR(aux.average_sensing_cost, 0.3, 1e-15);
   EXPECT_DOUBLE_EQ(aux.average_transmission_cost, 0.5);
}

TEST(Aggregates, EmptyAndZeroDenominators) {
   MetricTotals t;
   EXPECT_THROW(system_aggregates(t), NoTwinsError);
   EXPECT_THROW(qpuc(t), ZeroDenominatorError);
   EXPECT_THROW(ppuq(t), ZeroDenominatorError);
   TwinRecord r;
   r.qdt = 0.5;
   r.cdt = 0.5;
   t.add(r);
   EXPECT_DOUBLE_EQ(qpuc(t), 1.0);
   auto j = metric_summary_json(MetricTotals{});
   EXPECT_TRUE(j["qpuc"].is_null());
   EXPECT_TRUE(j["system_quality"].is_null());
}

TEST(Export, CsvRoundTripsDoubles) {
   std::vector< TwinRecord > recs(1);
   recs[0].episode = 2;
   recs[0].slot = 5;
   recs[0].entity_id = 3;
   recs[0].raw.timeliness = 0.1 + 0.2;
   recs[0].qdt = 1.0 / 3.0;
   std::ostringstream os;
   write_metric_csv_header(os);
   write_metric_csv_rows(os, recs);
   std::istringstream in(os.str());
   std::string header;
   std::string row;
   std::getline(in, header);
   std::getline(in, row);
   EXPECT_EQ(row.substr(0, 26), "2,5,3,0.30000000000000004,");
   EXPECT_NE(row.find(",0.3333333333333333,"), std::string::npos);
   EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}
