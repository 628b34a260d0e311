// mcsens CONFIG [--seed N] [--out-dir DIR]
//
// Output directory precedence: --out-dir, then MCSENS_OUT_DIR, then the config's out_dir.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mcsens/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Markov chain sensitivity experiments"};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("config", config_path, "JSON experiment config")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out-dir", out_dir, "override the output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mcsens::exit_code(mcsens::ErrorKind::schema);
  }

  try {
    std::ifstream is(config_path);
    if (!is) throw mcsens::SchemaError("cannot open config '" + config_path + "'");
    mcsens::RunOverrides ov;
    ov.seed = seed;
    if (out_dir) {
      ov.out_dir = out_dir;
    } else if (const char* env = std::getenv("MCSENS_OUT_DIR"); env && *env) {
      ov.out_dir = std::string(env);
    }
    const auto rec = mcsens::run(mcsens::parse_config(is), ov);
    mcsens::emit_plot_data(rec);
    std::cout << mcsens::summary_text(rec) << "outputs: " << rec.out_dir << '\n';
    return 0;
  } catch (const mcsens::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mcsens::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mcsens::exit_code(mcsens::ErrorKind::numerical);
  }
}
