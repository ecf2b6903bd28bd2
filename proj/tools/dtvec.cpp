// dtvec: train, evaluate, sweep and export runs of the vehicular digital-twin simulator.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dtvec/dtvec.hpp"

namespace {

struct CommonFlags {
   std::string config;
   std::optional< std::uint64_t > seed;
   bool single_thread = false;
   std::string mode;
   std::string out;
   std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
   cmd->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
   cmd->add_option("--seed", f.seed, "seed for scenario-independent randomness (training, evaluation)");
   cmd->add_flag("--single-thread", f.single_thread, "interleave actor and learner on one thread (reproducible)");
   cmd->add_option("--mode", f.mode, "mamo | random | centralized | multiagent-fixed");
   cmd->add_option("--out", f.out, "output directory");
}

dtvec::RunConfig resolve(const CommonFlags& f) {
   dtvec::RunConfig cfg = f.config.empty() ? dtvec::RunConfig{} : dtvec::load_run_config(f.config);
   if(f.seed) {
      cfg.training.seed = *f.seed;
      cfg.experiment.eval_seed = *f.seed + 1000;
   }
   if(f.single_thread) {
      cfg.training.single_thread = true;
   }
   if(!f.mode.empty()) {
      cfg.mode = dtvec::parse_mode(f.mode);
   }
   if(!f.out.empty()) {
      cfg.experiment.out = f.out;
   }
   if(!f.checkpoint.empty()) {
      cfg.experiment.checkpoint = f.checkpoint;
   }
   return cfg;
}

}  // namespace

int main(int argc, char** argv) {
   CLI::App app{"Digital-twin sensing and uploading at a vehicular edge node"};
   app.require_subcommand(1);

   CommonFlags train_f;
   auto* train = app.add_subcommand("train", "train the selected mode and evaluate it");
   add_common(train, train_f);

   CommonFlags eval_f;
   auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or RA) over fresh episodes");
   add_common(eval, eval_f);
   eval->add_option("--checkpoint", eval_f.checkpoint, "checkpoint written by train")->check(CLI::ExistingFile);

   CommonFlags sweep_f;
   std::string axis;
   auto* sweep = app.add_subcommand("sweep", "evaluate one policy across a parameter axis");
   add_common(sweep, sweep_f);
   sweep->add_option("--sweep", axis, "bandwidth | required_info | scenario")->required();
   sweep->add_option("--checkpoint", sweep_f.checkpoint, "policy to sweep; trains one when omitted")->check(CLI::ExistingFile);

   std::string run_dir;
   auto* plots = app.add_subcommand("export-plots", "write plot-ready CSVs for a run directory");
   plots->add_option("run_dir", run_dir, "directory written by train/sweep")->required();

   try {
      app.parse(argc, argv);
   } catch(const CLI::ParseError& e) {
      return app.exit(e);
   }

   try {
      if(*train) {
         auto a = dtvec::cmd_train(resolve(train_f), &std::cerr);
         std::cout << dtvec::to_json(a.evaluation).dump() << '\n';
      } else if(*eval) {
         std::cout << dtvec::to_json(dtvec::cmd_eval(resolve(eval_f))).dump() << '\n';
      } else if(*sweep) {
         const auto cfg = resolve(sweep_f);
         const auto ax = dtvec::parse_axis(axis);
         dtvec::cmd_sweep(cfg, ax, &std::cerr);
         std::cout << (std::filesystem::path(cfg.experiment.out) / (std::string("sweep_") + dtvec::to_string(ax) + ".csv")).string()
                   << '\n';
      } else if(*plots) {
         for(const auto& p : dtvec::cmd_export_plots(run_dir)) {
            std::cout << p.string() << '\n';
         }
      }
   } catch(const dtvec::ParseError& e) {
      std::cerr << "dtvec: " << e.what() << (e.line() ? " (line " + std::to_string(e.line()) + ")" : "") << '\n';
      return 2;
   } catch(const std::exception& e) {
      std::cerr << "dtvec: " << e.what() << '\n';
      return 1;
   }
   return 0;
}
