#include <gtest/gtest.h>

#include <vector>

#include "dtvec/sensing_queue.hpp"

using namespace dtvec;

namespace {

QueueEntry entry(int id, double lambda, double alpha, double variance, int priority) {
   return {id, lambda, priority, {alpha, variance}};
}

}  // namespace

TEST(Moments, Arrival) {
   EXPECT_DOUBLE_EQ(arrival_moment(3.4, 2.0), 3.0);
   EXPECT_DOUBLE_EQ(arrival_moment(5.0, 1.0), 5.0);
   EXPECT_DOUBLE_EQ(arrival_moment(3.0, 0.5), 2.0);
   // 1/3 Hz at t=3 must not land one period early.
   EXPECT_DOUBLE_EQ(arrival_moment(3.0, 1.0 / 3.0), 3.0);
}

TEST(Moments, Updating) {
   EXPECT_DOUBLE_EQ(updating_moment(3.0, 2.0), 2.0);
   EXPECT_DOUBLE_EQ(updating_moment(4.0, 4.0), 4.0);
   EXPECT_DOUBLE_EQ(updating_moment(6.8, 3.0), 6.0);
}

TEST(Moments, NeverExceedTheirInput) {
   for(double t = 0.0; t < 20.0; t += 0.37) {
      for(double f : {0.13, 0.5, 1.0, 1.7, 3.0}) {
         const double a = arrival_moment(t, f);
         EXPECT_LE(a, t);
         EXPECT_GT(a, t - 1.0 / f - 1e-9);
         EXPECT_LE(updating_moment(a, 1.3), a);
      }
   }
}

TEST(Workload, Totals) {
   std::vector< QueueEntry > none;
   EXPECT_EQ(total_workload(none), 0.0);
   std::vector< QueueEntry > one{entry(0, 2.0, 0.2, 0.0, 1)};
   EXPECT_NEAR(total_workload(one), 0.4, 1e-15);
   std::vector< QueueEntry > two{entry(0, 2.0, 0.2, 0.0, 2), entry(1, 1.0, 0.3, 0.0, 1)};
   EXPECT_NEAR(total_workload(two), 0.7, 1e-15);
   EXPECT_EQ(workload_ahead(two[0], two), 0.0);
   EXPECT_NEAR(workload_ahead(two[1], two), 0.4, 1e-15);
}

TEST(PkQueuingTime, SingleClassIsMG1Wait) {
   // λ=0.5, α=1, variance 1: E[S²]=2, P-K wait λE[S²]/(2(1-ρ)) = 1.
   std::vector< QueueEntry > q{entry(0, 0.5, 1.0, 1.0, 1)};
   EXPECT_NEAR(pk_queuing_time(q[0], q), 1.0, 1e-12);
   // Deterministic service: M/D/1 wait ρ/(2μ(1-ρ)) = 0.5.
   q[0].upload_time.variance = 0.0;
   EXPECT_NEAR(pk_queuing_time(q[0], q), 0.5, 1e-12);
}

TEST(PkQueuingTime, VanishesWithLoad) {
   std::vector< QueueEntry > q{entry(0, 1e-9, 1.0, 1.0, 1)};
   EXPECT_LT(pk_queuing_time(q[0], q), 1e-8);
}

TEST(PkQueuingTime, TwoClassesMatchOracle) {
   std::vector< QueueEntry > q{entry(0, 0.3, 0.5, 0.25, 2), entry(1, 0.2, 0.5, 0.25, 1)};
   const double low = pk_queuing_time(q[1], q);
   EXPECT_NEAR(low, 0.2843137254901961, 1e-12);
   const auto sim = simulate_queue_oracle(q, 1'000'000, 7);
   EXPECT_NEAR(sim[1] / low, 1.0, 0.03);
   EXPECT_NEAR(sim[0] / pk_queuing_time(q[0], q), 1.0, 0.03);
}

TEST(PkQueuingTime, MonotoneInOtherLoad) {
   std::vector< QueueEntry > q{entry(0, 0.3, 0.5, 0.1, 2), entry(1, 0.2, 0.5, 0.1, 1), entry(2, 0.1, 0.4, 0.1, 3)};
   double prev = pk_queuing_time(q[1], q);
   for(int k = 0; k < 5; ++k) {
      q[0].frequency += 0.05;
      const double now = pk_queuing_time(q[1], q);
      EXPECT_GE(now, prev);
      prev = now;
   }
   // A lower-priority class does not delay the top one.
   const double top = pk_queuing_time(q[2], q);
   q[1].frequency *= 1.5;
   EXPECT_GE(pk_queuing_time(q[2], q), top);
}

TEST(PkQueuingTime, RejectsUnstable) {
   std::vector< QueueEntry > q{entry(0, 2.0, 0.6, 0.0, 1)};
   EXPECT_THROW(pk_queuing_time(q[0], q), UnstableQueueError);
}

TEST(Oracle, RejectsDegenerateInput) {
   std::vector< QueueEntry > q{entry(0, 0.5, 1.0, 0.0, 1)};
   EXPECT_THROW(simulate_queue_oracle(q, 0, 1), Error);
   std::vector< QueueEntry > unstable{entry(0, 1.0, 1.0, 0.0, 1)};
   EXPECT_THROW(simulate_queue_oracle(unstable, 10, 1), UnstableQueueError);
}

TEST(Oracle, DeterministicForSeed) {
   std::vector< QueueEntry > q{entry(0, 0.3, 0.5, 0.25, 2), entry(1, 0.2, 0.5, 0.25, 1)};
   EXPECT_EQ(simulate_queue_oracle(q, 20000, 3), simulate_queue_oracle(q, 20000, 3));
   EXPECT_NE(simulate_queue_oracle(q, 20000, 3), simulate_queue_oracle(q, 20000, 4));
}

TEST(Oracle, NonPreemptiveMD1) {
   std::vector< QueueEntry > q{entry(0, 0.5, 1.0, 0.0, 1)};
   const auto w = simulate_queue_oracle(q, 1'000'000, 11, QueueDiscipline::non_preemptive);
   EXPECT_NEAR(w[0], 0.5, 0.015);
}
