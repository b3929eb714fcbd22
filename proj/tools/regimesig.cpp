// regimesig <stage> --config <path> [--out <dir>] [--seed <u64>]
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "regimesig/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace regimesig;
  namespace pl = regimesig::pipeline;

  CLI::App app{"Regime-aware market signal pipeline"};
  std::string stage, config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> stages(std::begin(pl::kStages), std::end(pl::kStages));
  app.add_option("stage", stage, "pipeline stage")->required()->check(CLI::IsMember(stages));
  app.add_option("--config", config_path, "key = value config file")->required();
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides 'out')");
  auto* seed_opt = app.add_option("--seed", seed, "seed (overrides 'seed')");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const auto cfg = pl::load_config(config_path, *out_opt ? std::optional<std::filesystem::path>(out_dir) : std::nullopt,
                                     *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt);
    pl::run_stage(stage, cfg);
  } catch (const Error& e) {
    std::cerr << "regimesig " << stage << ": " << e.what() << '\n';
    return pl::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "regimesig " << stage << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
