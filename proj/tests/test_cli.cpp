#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedmode/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "fedmode_cli_test";

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args, const std::string& env = {}) {
    fs::create_directories(kDir);
    const auto out = kDir / "stdout.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" FEDMODE_CLI_PATH "' " + args + " > '" +
                            out.string() + "' 2> '" + (kDir / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

fs::path write_config(const std::string& name, const std::string& text) {
    fs::create_directories(kDir);
    const auto p = kDir / name;
    std::ofstream(p) << text;
    return p;
}

const char* kTiny = R"({"dataset":{"trips_per_mode":20},
  "federation":{"workers":2,"rounds":1,"local_epochs":1},
  "model":{"hidden":8,"cnn_filters":4},"ensemble":{"meta_epochs":5}})";

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("gradcheck passes and prints one line per architecture") {
    const auto r = run("gradcheck");
    CHECK(r.code == 0);
    CHECK(count_lines(r.out) == 4);
    for (const char* a : {"mlp", "lstm", "gru", "cnn1d"}) CHECK(r.out.find(a) != std::string::npos);
}

TEST_CASE("gradcheck negative control exits nonzero") {
    const auto r = run("gradcheck --seeds 1 --corrupt-lstm-backward");
    CHECK(r.code == 2);
    CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("configuration errors exit with 1") {
    CHECK(run("train --config '" + write_config("typo.json", R"({"rouds":1})").string() + "'").code == 1);
    CHECK(run("train --config '" + write_config("bad.json", "{").string() + "'").code == 1);
    CHECK(run("train --config '" + (kDir / "missing.json").string() + "'").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("train").code == 1);
    const auto cfg = write_config("tiny.json", kTiny);
    CHECK(run("generate --config '" + cfg.string() + "' --out '" + (kDir / "g").string() + "'", "FEDMODE_SEED=abc")
              .code == 1);
}

TEST_CASE("generate, train and evaluate") {
    const auto cfg = write_config("tiny.json", kTiny);
    const auto gen = kDir / "gen";
    CHECK(run("generate --config '" + cfg.string() + "' --out '" + gen.string() + "'", "FEDMODE_SEED=99").code == 0);
    CHECK(fs::exists(gen / "trips.csv"));
    CHECK(fedmode::config::load_config(gen / "config.echo.json").seed == 99);

    const auto out = kDir / "run";
    CHECK(run("train --quiet --config '" + cfg.string() + "' --out '" + out.string() + "'", "FEDMODE_SEED=99").code ==
          0);
    CHECK(fs::exists(out / "metrics.csv"));
    CHECK(fedmode::config::load_config(out / "config.echo.json").seed == 99);

    const auto ev = run("evaluate --checkpoint-dir '" + (out / "checkpoints").string() + "' --data '" +
                        (gen / "trips.csv").string() + "'");
    CHECK(ev.code == 0);
    CHECK(count_lines(ev.out) == 6);

    CHECK(run("evaluate --checkpoint-dir '" + (kDir / "nowhere").string() + "' --data '" +
              (gen / "trips.csv").string() + "'")
              .code == 2);
    fs::remove_all(kDir);
}
