#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtvec/experiment.hpp"

using namespace dtvec;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
   std::ifstream in(p, std::ios::binary);
   std::ostringstream os;
   os << in.rdbuf();
   return os.str();
}

fs::path scratch(const std::string& name) {
   auto p = fs::temp_directory_path() / ("dtvec_test_" + name);
   fs::remove_all(p);
   return p;
}

// Two vehicles, a handful of iterations; trains in well under a second.
RunConfig small_run(const fs::path& out) {
   std::istringstream in(
      "[experiment]\nprofile = desk\neval_episodes = 2\n"
      "[scenario]\nvehicles = 2\ninfos = 4\nentities = 2\nrequired_info = 2\nslot_count = 6\n"
      "[neural]\npolicy_hidden = 8\ncritic_hidden = 8\n"
      "[mamo]\niterations = 3\nbatch_size = 8\nupdate_every = 2\n");
   auto c = parse_run_config(in);
   c.experiment.out = out.string();
   return c;
}

}  // namespace

TEST(Config, DefaultsAndProfile) {
   std::istringstream empty("");
   const auto full = parse_run_config(empty);
   EXPECT_EQ(full.profile, "full");
   EXPECT_EQ(full.training.batch_size, 256u);
   std::istringstream desk("[experiment]\nprofile = desk\n[mamo]\nbatch_size = 32\n");
   const auto d = parse_run_config(desk);
   EXPECT_EQ(d.training.batch_size, 32u);
   EXPECT_EQ(d.training.iterations, TrainingConfig::desk().iterations);
}

TEST(Config, RejectsUnknownAndMalformed) {
   std::istringstream unknown("[mamo]\nbatchsize = 32\n");
   EXPECT_THROW(parse_run_config(unknown), ConfigError);
   std::istringstream bad_value("[mamo]\nbatch_size = lots\n");
   EXPECT_THROW(parse_run_config(bad_value), Error);
   std::istringstream bad_profile("[experiment]\nprofile = huge\n");
   EXPECT_THROW(parse_run_config(bad_profile), ConfigError);
   std::istringstream bad_mode("[baselines]\nmode = greedy\n");
   EXPECT_THROW(parse_run_config(bad_mode), ConfigError);
   EXPECT_THROW(load_run_config("/nonexistent/dtvec.ini"), ConfigError);
}

TEST(Config, WriteRoundTrips) {
   std::istringstream in(
      "[experiment]\nprofile = desk\neval_weight_quality = 0.3\n[scenario]\nbandwidth = 1.5e6\n"
      "[neural]\npolicy_hidden = 16, 8\n[baselines]\nmode = multiagent-fixed\n");
   const auto a = parse_run_config(in);
   std::stringstream text;
   write_run_config(text, a);
   const auto b = parse_run_config(text);
   std::stringstream again;
   write_run_config(again, b);
   EXPECT_EQ(text.str(), again.str());
   EXPECT_EQ(b.scenario.bandwidth, 1.5e6);
   EXPECT_EQ(b.training.policy_hidden, (std::vector< std::size_t >{16, 8}));
   EXPECT_EQ(b.mode, AlgorithmMode::multiagent_fixed);
   EXPECT_DOUBLE_EQ(b.experiment.eval_weights.profit, 0.7);
}

TEST(Commands, TrainWritesArtifacts) {
   const auto dir = scratch("train");
   const auto a = cmd_train(small_run(dir));
   for(const char* f : {"config.ini", "train_log.jsonl", "checkpoint.bin", "eval_metrics.csv", "eval_summary.json"}) {
      EXPECT_TRUE(fs::exists(dir / f)) << f;
   }
   std::ifstream log(dir / "train_log.jsonl");
   int lines = 0;
   for(std::string l; std::getline(log, l);) {
      ++lines;
   }
   EXPECT_EQ(lines, 3);
   EXPECT_EQ(a.evaluation.episodes.size(), 2u);
   // The saved config reproduces the run.
   const auto reloaded = load_run_config((dir / "config.ini").string());
   EXPECT_EQ(reloaded.training.iterations, 3);
   EXPECT_EQ(reloaded.scenario.vehicles, 2);

   auto cfg = small_run(scratch("eval_ck"));
   cfg.experiment.checkpoint = (dir / "checkpoint.bin").string();
   const auto s = cmd_eval(cfg);
   EXPECT_EQ(s.scalarized.mean, a.evaluation.scalarized.mean);
   fs::remove_all(dir);
   fs::remove_all(cfg.experiment.out);
}

TEST(Commands, EvalNeedsPolicy) {
   auto cfg = small_run(scratch("eval"));
   EXPECT_THROW(cmd_eval(cfg), ConfigError);
   cfg.mode = AlgorithmMode::random;
   const auto s = cmd_eval(cfg);
   EXPECT_EQ(s.episodes.size(), 2u);
   EXPECT_TRUE(fs::exists(fs::path(cfg.experiment.out) / "eval_summary.json"));
   fs::remove_all(cfg.experiment.out);
}

TEST(Commands, SweepAndExportPlots) {
   const auto dir = scratch("sweep");
   auto cfg = small_run(dir);
   cfg.mode = AlgorithmMode::random;
   cfg.experiment.sweep_bandwidth = {1e6, 2e6};
   const auto pts = cmd_sweep(cfg, SweepAxis::bandwidth);
   ASSERT_EQ(pts.size(), 2u);
   const auto csv = slurp(dir / "sweep_bandwidth.csv");
   EXPECT_EQ(csv.substr(0, csv.find('\n')),
             "axis,value,episodes,twin_slots,system_quality,system_profit,qpuc,ppuq,at,ar,asc,atc,scalarized_return");
   EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
   EXPECT_THROW(parse_axis("speed"), ConfigError);

   const auto files = cmd_export_plots(dir.string());
   ASSERT_EQ(files.size(), 1u);
   const auto first = slurp(files.front());
   cmd_export_plots(dir.string());
   EXPECT_EQ(slurp(files.front()), first);
   EXPECT_THROW(cmd_export_plots(scratch("missing").string()), Error);
   fs::remove_all(dir);
}
