#include <gtest/gtest.h>

#include <sstream>

#include "dtvec/scenario.hpp"

using namespace dtvec;

TEST(Trajectory, InterpolatesAndClamps) {
   Trajectory t{{0.0, {0.0, 0.0}}, {2.0, {10.0, 4.0}}};
   EXPECT_EQ(position_at(t, 1.0), (Point{5.0, 2.0}));
   EXPECT_EQ(position_at(t, -3.0), (Point{0.0, 0.0}));
   EXPECT_EQ(position_at(t, 9.0), (Point{10.0, 4.0}));
   EXPECT_EQ(position_at(t, 2.0), (Point{10.0, 4.0}));
   EXPECT_THROW(position_at({}, 0.0), Error);
}

TEST(Trajectory, ParsesCsv) {
   std::istringstream in(
      "vehicle_id,time_s,x_m,y_m\n"
      "1,0,0,0\n"
      "1,1,3,4\n"
      "\n"
      "2, 0.5 ,1,1\r\n");
   auto m = parse_trajectories(in);
   ASSERT_EQ(m.size(), 2u);
   EXPECT_EQ(m[1].size(), 2u);
   EXPECT_DOUBLE_EQ(m[1][1].position.y, 4.0);
   EXPECT_DOUBLE_EQ(m[2][0].time, 0.5);
}

TEST(Trajectory, RejectsBadRows) {
   {
      std::istringstream in("id,t,x,y\n1,0,0,0\n");
      EXPECT_THROW(parse_trajectories(in), ParseError);
   }
   {
      std::istringstream in("vehicle_id,time_s,x_m,y_m\n1,0,0,0\n1,0,1,1\n");
      try {
         parse_trajectories(in);
         FAIL() << "duplicate time accepted";
      } catch(const ParseError& e) {
         EXPECT_EQ(e.line(), 3u);
      }
   }
   {
      std::istringstream in("vehicle_id,time_s,x_m,y_m\n1,zero,0,0\n");
      EXPECT_THROW(parse_trajectories(in), ParseError);
   }
   {
      std::istringstream in("vehicle_id,time_s,x_m,y_m\n1,0,0\n");
      EXPECT_THROW(parse_trajectories(in), ParseError);
   }
   {
      std::istringstream in("");
      EXPECT_THROW(parse_trajectories(in), ParseError);
   }
}

TEST(Scenario, DeskIsDeterministic) {
   DeskScenarioOptions opt;
   auto a = make_desk_scenario(opt);
   auto b = make_desk_scenario(opt);
   ASSERT_EQ(a.vehicles.size(), 5u);
   ASSERT_EQ(a.infos.size(), 10u);
   ASSERT_EQ(a.entities.size(), 6u);
   for(std::size_t s = 0; s < a.vehicles.size(); ++s) {
      EXPECT_EQ(a.vehicles[s].trajectory, b.vehicles[s].trajectory);
      EXPECT_FALSE(a.vehicles[s].capabilities.empty());
   }
   for(const auto& e : a.entities) {
      EXPECT_EQ(e.required_info.size(), 4u);
   }
}

TEST(Scenario, RequiredInfoKnobLeavesTheRestAlone) {
   DeskScenarioOptions opt;
   auto a = make_desk_scenario(opt);
   opt.required_info = 7;
   auto b = make_desk_scenario(opt);
   for(std::size_t d = 0; d < a.infos.size(); ++d) {
      EXPECT_EQ(a.infos[d].size, b.infos[d].size);
   }
   EXPECT_EQ(a.vehicles[2].trajectory, b.vehicles[2].trajectory);
   EXPECT_EQ(b.entities[0].required_info.size(), 7u);
}

TEST(Scenario, ValidateCatchesInvariants) {
   auto sc = make_desk_scenario({});
   auto bad = sc;
   bad.infos[1].id = bad.infos[0].id;
   EXPECT_THROW(bad.validate(), ConfigError);
   bad = sc;
   bad.vehicles[0].capabilities[0].freq_min = 2.0;
   bad.vehicles[0].capabilities[0].freq_max = 1.0;
   EXPECT_THROW(bad.validate(), ConfigError);
   bad = sc;
   bad.entities[0].required_info.push_back(99);
   EXPECT_THROW(bad.validate(), ConfigError);
   bad = sc;
   bad.slot_count = 0;
   EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Scenario, CoverageByDistance) {
   Scenario sc;
   sc.slot_count = 2;
   sc.infos = {{0, 0, 1.0, 1.0}};
   sc.edge = {{0.0, 0.0}, 100.0, 1e6};
   sc.vehicles = {{7, {{0.0, {50.0, 0.0}}}, {}, 0.1}, {8, {{0.0, {100.0, 0.0}}, {1.0, {150.0, 0.0}}}, {}, 0.1}};
   sc.entities = {{0, {0}}};
   sc.validate();
   EXPECT_EQ(vehicles_in_range(sc, 0), (std::vector< int >{7, 8}));  // boundary counts as covered
   EXPECT_EQ(vehicles_in_range(sc, 1), (std::vector< int >{7}));
}

TEST(Scenario, SyntheticPathsStayInside) {
   auto m = generate_synthetic_trajectories(3, 4, 200.0, 100.0, 30.0, 5.0, 15.0);
   ASSERT_EQ(m.size(), 4u);
   for(const auto& [id, t] : m) {
      EXPECT_EQ(t.size(), 31u);
      for(std::size_t i = 0; i < t.size(); ++i) {
         EXPECT_GE(t[i].position.x, 0.0);
         EXPECT_LE(t[i].position.x, 200.0);
         EXPECT_GE(t[i].position.y, 0.0);
         EXPECT_LE(t[i].position.y, 100.0);
         if(i > 0) {
            EXPECT_LE(distance(t[i].position, t[i - 1].position), 15.0 + 1e-9);
         }
      }
   }
}
