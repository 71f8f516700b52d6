#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "dppx/checkpoint.hpp"
#include "dppx/dataset.hpp"
#include "dppx/harness.hpp"
#include "dppx/model.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using namespace dppx;

namespace {

std::string g_bin;
fs::path g_dir;

int run(const std::string & args) {
    const std::string cmd = "cd '" + g_dir.string() + "' && '" + g_bin + "' " + args + " > last.out 2> last.err";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path & p) {
    std::ifstream f(g_dir / p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool exists(const fs::path & p) { return fs::exists(g_dir / p); }

void write_delta(const std::string & name, std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Matrix m(rows, cols);
    RngStream rng(seed, "cli/delta");
    for (float & v : m.flat()) {
        v = static_cast<float>(rng.next_normal());
    }
    DeltaSet d{"plain", {make_matrix_tensor("w", m)}, std::nullopt, std::nullopt};
    SparseDelta s = to_csr(d, false);
    for (auto & t : s.tensors) {
        t.payload = t.densify();
    }
    save(g_dir / name, s);
}

// tiny base, fine and data shared by the model-level cases
void make_models() {
    if (exists("base.dppx")) {
        return;
    }
    REQUIRE(run("gen-data --out-dir d0 --classes 3 --dim 8 --train 200 --val 80 --test 120 --seed 1") == 0);
    REQUIRE(run("gen-data --out-dir d1 --classes 3 --dim 8 --train 200 --val 80 --test 120 --seed 1 --variant 1") == 0);
    REQUIRE(run("train --data d0/train.dpxd --hidden 24 --epochs 4 --lr 5e-3 --seed 2 --out base.dppx") == 0);
    REQUIRE(run("train --data d1/train.dpxd --init base.dppx --epochs 4 --lr 5e-3 --seed 3 --out fine.dppx") == 0);
    REQUIRE(run("delta --base base.dppx --fine fine.dppx --out delta.dppx") == 0);
}

}  // namespace

TEST_CASE("usage errors exit 1 and write nothing") {
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    write_delta("d10.dppx", 10, 10, 1);
    CHECK(run("prune --delta d10.dppx --method bogus --p 0.5 --out bad1.dppx") == 1);
    CHECK_FALSE(exists("bad1.dppx"));
    CHECK(run("prune --delta d10.dppx --fine d10.dppx --p 0.5 --out bad2.dppx") == 1);
    CHECK_FALSE(exists("bad2.dppx"));
    CHECK(run("prune --delta d10.dppx --method darex-q --p 0.5 --out bad3.dppx") == 1);
    CHECK_FALSE(exists("bad3.dppx"));
    CHECK(run("bounds --gamma 2 --out bad4.csv") != 0);
    CHECK_FALSE(exists("bad4.csv"));
    CHECK(run("bounds --p-grid 0.5,1.5 --out bad5.csv") == 1);
    CHECK_FALSE(exists("bad5.csv"));
    CHECK(run("experiment --id nope --out-dir exbad") == 1);
    CHECK_FALSE(exists("exbad"));
    CHECK(setenv("DPPX_SEED", "abc", 1) == 0);
    CHECK(run("prune --delta d10.dppx --p 0.5 --out bad6.dppx") == 1);
    CHECK_FALSE(exists("bad6.dppx"));
    unsetenv("DPPX_SEED");
}

TEST_CASE("data errors exit 2") {
    {
        std::ofstream f(g_dir / "junk.dppx", std::ios::binary);
        f << "definitely not a container";
    }
    CHECK(run("prune --delta junk.dppx --p 0.5 --out j.dppx") == 2);
    CHECK_FALSE(exists("j.dppx"));
    write_delta("d10.dppx", 10, 10, 1);
    CHECK(run("eval --base d10.dppx --data none.dpxd") == 2);
}

TEST_CASE("prune examples") {
    write_delta("d10.dppx", 10, 10, 1);
    REQUIRE(run("prune --delta d10.dppx --method dare --p 0.99 --seed 3 --out dare.dppx") == 0);
    const SparseDelta s = load_delta(g_dir / "dare.dppx");
    REQUIRE(s.meta.q.size() == 1);
    CHECK(s.meta.q[0] == doctest::Approx(0.01));
    CHECK(s.meta.extra.at("cli").at("seed") == 3);

    REQUIRE(run("prune --delta d10.dppx --method mp --p 0.5 --out mp.dppx") == 0);
    CHECK(slurp("last.out").find("nnz=50 ") != std::string::npos);
    CHECK(load_delta(g_dir / "mp.dppx").stored_entries() == 50);

    write_delta("d300.dppx", 300, 300, 2);
    REQUIRE(run("prune --delta d300.dppx --method structured --a 0.05 --b 0.20 --seed 5 --out st.dppx") == 0);
    const std::string out = slurp("last.out");
    const double retention = std::stod(out.substr(out.find("retention=") + 10));
    CHECK(retention == doctest::Approx(0.01).epsilon(0.2));

    // same seed from the environment or the flag gives the same file
    REQUIRE(run("prune --delta d10.dppx --p 0.7 --seed 7 --out flag.dppx") == 0);
    CHECK(setenv("DPPX_SEED", "7", 1) == 0);
    REQUIRE(run("prune --delta d10.dppx --p 0.7 --out env.dppx") == 0);
    unsetenv("DPPX_SEED");
    CHECK(slurp("flag.dppx") == slurp("env.dppx"));
    REQUIRE(run("prune --delta d10.dppx --p 0.7 --seed 7 --out again.dppx") == 0);
    CHECK(slurp("flag.dppx") == slurp("again.dppx"));
}

TEST_CASE("pack and unpack round trip") {
    write_delta("d10.dppx", 10, 10, 1);
    REQUIRE(run("prune --delta d10.dppx --p 0.8 --seed 1 --out pr.dppx") == 0);
    REQUIRE(run("unpack --in pr.dppx --out dense.dppx") == 0);
    REQUIRE(run("pack --in dense.dppx --out packed.dppx") == 0);
    REQUIRE(run("unpack --in packed.dppx --out dense2.dppx") == 0);
    CHECK(slurp("dense.dppx") == slurp("dense2.dppx"));
    CHECK(slurp("packed.dppx").size() < slurp("dense.dppx").size());
}

TEST_CASE("bounds output") {
    REQUIRE(run("bounds --p-grid 0.1,0.3,0.5,0.7,0.9,0.99 --out b.csv") == 0);
    std::istringstream in(slurp("b.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "p,chebyshev,hoeffding,ks,bk");
    int rows = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            f.push_back(cell);
        }
        if (line.back() == ',') {
            f.emplace_back();
        }
        REQUIRE(f.size() == 5);
        const double p = std::stod(f[0]);
        CHECK(std::stod(f[3]) <= std::stod(f[2]));
        CHECK(f[4].empty() == (p < 0.5));
        ++rows;
    }
    CHECK(rows == 6);
    const auto meta = nlohmann::json::parse(slurp("b.csv.json"));
    CHECK(meta.at("gamma") == 0.05);
}

TEST_CASE("find-q") {
    make_models();
    REQUIRE(run("find-q --base base.dppx --delta delta.dppx --data d1/val.dpxd --p 0.99 --rounds 1 --out q1.json") == 0);
    const auto q1 = nlohmann::json::parse(slurp("q1.json"));
    CHECK(q1.at("trace").size() == 1);
    CHECK(q1.at("q").get<double>() == q1.at("trace")[0].at("q").get<double>());

    REQUIRE(run("find-q --base base.dppx --delta delta.dppx --data d1/val.dpxd --p 0.99 --rounds 20 --seed 4 --out qa.json") == 0);
    REQUIRE(run("find-q --base base.dppx --delta delta.dppx --data d1/val.dpxd --p 0.99 --rounds 20 --seed 4 --out qb.json") == 0);
    CHECK(slurp("qa.json") == slurp("qb.json"));
    CHECK(nlohmann::json::parse(slurp("qa.json")).at("q").get<double>() > 0.01);

    CHECK(run("find-q --base base.dppx --delta delta.dppx --data unl.dpxd --objective val --out qv.json") == 2);
    Dataset unl = load_dataset(g_dir / "d1/val.dpxd");
    unl.labels.clear();
    save_dataset(g_dir / "unl.dpxd", unl);
    CHECK(run("find-q --base base.dppx --delta delta.dppx --data unl.dpxd --objective val --out qv.json") == 1);
    CHECK_FALSE(exists("qv.json"));

    REQUIRE(run("find-q --base base.dppx --delta delta.dppx --data d1/val.dpxd --p 0.9 --per-layer --rounds 4 --out ql.json") == 0);
    REQUIRE(run("prune --delta delta.dppx --method darex-q --p 0.9 --q-file ql.json --out pl.dppx") == 0);
    CHECK(load_delta(g_dir / "pl.dppx").meta.q.size() == 2);
}

TEST_CASE("eval and zero delta") {
    make_models();
    REQUIRE(run("delta --base base.dppx --fine base.dppx --out zero.dppx") == 0);
    REQUIRE(run("eval --base base.dppx --data d1/test.dpxd") == 0);
    const std::string a = slurp("last.out");
    REQUIRE(run("eval --base base.dppx --delta zero.dppx --data d1/test.dpxd --out ev.json") == 0);
    CHECK(slurp("last.out") == a);
    REQUIRE(run("eval --base base.dppx --delta delta.dppx --data d1/test.dpxd") == 0);
    const std::string b = slurp("last.out");
    REQUIRE(run("eval --base fine.dppx --data d1/test.dpxd") == 0);
    // f32 deltas need not invert exactly, but the accuracy must match
    CHECK(slurp("last.out").substr(0, slurp("last.out").find(' ')) == b.substr(0, b.find(' ')));
}

TEST_CASE("training metadata and numeric failure") {
    make_models();
    const ModelCheckpoint ck = load_checkpoint(g_dir / "fine.dppx");
    CHECK(ck.meta().at("train").at("seed") == 3);
    CHECK(ck.meta().at("history").size() == 4);
    CHECK(run("train --data d1/train.dpxd --init base.dppx --epochs 2 --lr 1e300 --out nan.dppx") == 3);
    CHECK_FALSE(exists("nan.dppx"));
    CHECK(run("train --data d1/train.dpxd --epochs 1 --reg l2 --lambda 0.1 --out noanchor.dppx") == 1);
}

TEST_CASE("experiment row count") {
    REQUIRE(run("experiment --id fig5a --seeds 5 --hidden 12 --train 60 --test 60 --pretrain-epochs 1 "
                "--finetune-epochs 1 --out-dir ex") == 0);
    const ExperimentReport rep = ExperimentReport::from_csv(slurp("ex/fig5a-reg-dare.csv"));
    const HarnessConfig defaults;
    CHECK(rep.rows().size() == 5 * 3 * defaults.p_grid.size());
    const auto meta = nlohmann::json::parse(slurp("ex/fig5a-reg-dare.json"));
    CHECK(meta.at("config").at("seeds").size() == 5);
    CHECK(meta.at("config").at("shape").at("hidden") == 12);
}

int main(int argc, char ** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path to dppx> [doctest options]\n");
        return 2;
    }
    g_bin = fs::absolute(argv[1]).string();
    g_dir = fs::temp_directory_path() / "dppx_cli_test";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);
    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    const int rc = ctx.run();
    fs::remove_all(g_dir);
    return rc;
}
