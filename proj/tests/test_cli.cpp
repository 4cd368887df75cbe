#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sdvae/cli.hpp"
#include "test_support.hpp"

using namespace sdvae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

const fs::path& scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "sdvae_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

fs::path tiny_config() {
    const fs::path p = scratch() / "tiny.cfg";
    std::ofstream(p) << "# small synthetic run\n"
                        "variant = sdvae2\niaf = 1\nflow_length = 1\n"
                        "dataset = synthetic\nsyn_train = 80\nsyn_test = 20\n"
                        "classes = 4\nlabeled = 8\ndim_u = 2\ntrunk_hidden = 8\ndecoder_hidden = 8\n"
                        "batch_size = 20\nepochs = 2\nrecord_wallclock = 0\n";
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json last_json_line(const std::string& text) {
    std::istringstream in(text);
    std::string line, last;
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    return nlohmann::json::parse(last);
}

}  // namespace

TEST_CASE("no arguments prints usage and exits 2") {
    const Outcome o = cli({});
    CHECK(o.code == kExitUsage);
    CHECK(o.err.find("train") != std::string::npos);
    CHECK(last_json_line(o.err)["error"] == "usage");
}

TEST_CASE("unknown flag: exit 2 with a structured error") {
    const Outcome o = cli({"train", "--no-such-flag"});
    CHECK(o.code == kExitUsage);
    const auto j = last_json_line(o.err);
    CHECK(j.contains("error"));
    CHECK(j.contains("field"));
    CHECK(j.contains("message"));
}

TEST_CASE("bad config values: exit 2 naming the key") {
    const Outcome o = cli({"train", "--config", tiny_config().string(), "--set", "lambda=abc", "--out",
                           (scratch() / "bad").string()});
    CHECK(o.code == kExitUsage);
    CHECK(last_json_line(o.err)["field"] == "lambda");
    CHECK(cli({"grid", "--config", tiny_config().string(), "--grid", "dim_u=2,3"}).code == kExitUsage);
}

TEST_CASE("missing config or checkpoint: exit 4") {
    CHECK(cli({"train", "--config", (scratch() / "absent.cfg").string()}).code == kExitIo);
    CHECK(cli({"eval", "--config", tiny_config().string(), "--checkpoint", (scratch() / "absent.bin").string()}).code ==
          kExitIo);
}

TEST_CASE("train writes its artifacts; re-running from the resolved config is bitwise identical") {
    const fs::path a = scratch() / "run_a";
    const Outcome o = cli({"train", "--config", tiny_config().string(), "--out", a.string(), "--seed", "3"});
    REQUIRE(o.code == kExitOk);
    CHECK(last_json_line(o.out)["epochs"] == 2);
    for (const char* f : {"config.resolved.cfg", "metrics.jsonl", "checkpoint.bin"}) CHECK(fs::exists(a / f));

    std::istringstream metrics(slurp(a / "metrics.jsonl"));
    std::size_t lines = 0;
    for (std::string l; std::getline(metrics, l); ++lines) CHECK(nlohmann::json::parse(l).contains("elbo"));
    CHECK(lines == 2);

    const fs::path b = scratch() / "run_b";
    REQUIRE(cli({"train", "--config", (a / "config.resolved.cfg").string(), "--out", b.string()}).code == kExitOk);
    CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
    CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));

    const Outcome ev = cli({"eval", "--config", tiny_config().string(), "--checkpoint", (a / "checkpoint.bin").string()});
    REQUIRE(ev.code == kExitOk);
    CHECK(last_json_line(ev.out)["examples"] == 20);

    const fs::path lat = scratch() / "lat.csv";
    REQUIRE(cli({"export-latents", "--config", tiny_config().string(), "--checkpoint", (a / "checkpoint.bin").string(),
                 "--file", lat.string()})
                .code == kExitOk);
    CHECK(fs::exists(lat));
    const Outcome rec = cli({"export-recon", "--config", tiny_config().string(), "--checkpoint",
                             (a / "checkpoint.bin").string(), "--file", (scratch() / "rec.csv").string(), "--mask",
                             "mask-u"});
    REQUIRE(rec.code == kExitOk);
    CHECK(last_json_line(rec.out)["mask"] == "mask-u");
}

TEST_CASE("grid: one cell per combination and a CSV summary") {
    const fs::path g = scratch() / "grid";
    const Outcome o = cli({"grid", "--config", tiny_config().string(), "--out", g.string(), "--epochs", "1", "--grid",
                           "lambda=0.5,1", "--grid", "beta2=1"});
    REQUIRE(o.code == kExitOk);
    CHECK(last_json_line(o.out)["cells"] == 2);
    CHECK(last_json_line(o.out)["failures"] == 0);
    std::istringstream csv(slurp(g / "grid.csv"));
    std::string header, row0, row1;
    std::getline(csv, header);
    std::getline(csv, row0);
    std::getline(csv, row1);
    CHECK(header == "cell,seed,lambda,beta2,status,train_err,test_err,elbo,message");
    CHECK(row0.rfind("0,1,0.5,1,ok,", 0) == 0);
    CHECK(row1.rfind("1,2,1,1,ok,", 0) == 0);
    CHECK(fs::exists(g / "cell_1" / "metrics.jsonl"));
}

TEST_CASE("gradcheck subcommand passes") {
    const Outcome o = cli({"gradcheck", "--trials", "2"});
    CHECK(o.code == kExitOk);
    CHECK(o.out.find("max_rel_err") != std::string::npos);
}

TEST_CASE("the installed binary reports exit codes to the shell") {
    const char* path = std::getenv("SDVAE_CLI_PATH");
    if (!path) return;
    auto status = [&](const std::string& args) {
        const int raw = std::system(("\"" + std::string(path) + "\" " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("") == kExitUsage);
    CHECK(status("--help") == kExitOk);
    CHECK(status("train --config /nonexistent/x.cfg") == kExitIo);
}
