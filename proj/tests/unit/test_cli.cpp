#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "helpers.hpp"
#include "sotmle/cli.hpp"
#include "sotmle/simulation.hpp"

using namespace sotmle;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "sotmle");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / ("sotmle_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// key=value lines of a report; comment lines skipped
std::map<std::string, std::string> parse_report(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

std::string number(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

// Writes a dataset with outcomes mapped by y -> lo + (hi - lo) y, plus an optional t column.
void write_csv(const fs::path& path, const Dataset& d, const std::vector<int>& t = {}, double lo = 0.0,
               double hi = 1.0) {
    std::ofstream f(path);
    for (std::size_t j = 1; j <= d.dim(); ++j) f << 'w' << j << ',';
    f << "a,y" << (t.empty() ? "" : ",t") << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (double x : d.w(i)) f << number(x) << ',';
        f << d.a(i) << ',';
        if (d.observed(i)) f << number(lo + (hi - lo) * d.y(i));
        if (!t.empty()) f << ',' << t[i];
        f << '\n';
    }
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("hash of the empty string") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("reading data files") {
    std::istringstream ok("# comment\nw1,w2,a,y\n0.5,1,1,0.25\n-1,2,0,\n");
    const CsvData d = read_data_csv(ok);
    CHECK(d.data.size() == 2);
    CHECK(d.data.dim() == 2);
    CHECK(d.data.y(0) == 0.25);
    CHECK_FALSE(d.data.outcome(1).has_value());
    CHECK_FALSE(d.scaled);
    CHECK(d.treatment.empty());

    std::istringstream reordered("y,a,w2,w1,t\n3,1,0,1,1\n,0,1,2,0\n5,1,1,1,0\n");
    const CsvData r = read_data_csv(reordered);
    CHECK(r.data.w(1)[0] == 2.0);
    CHECK(r.scaled);
    CHECK(r.scale.min == 3.0);
    CHECK(r.scale.max == 5.0);
    CHECK(r.data.y(2) == 1.0);
    CHECK(r.treatment == std::vector<int>{1, 0, 0});

    auto error_of = [](const std::string& text, bool scale = true) {
        std::istringstream in(text);
        try {
            read_data_csv(in, scale);
        } catch (const TmleError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(error_of("w1,a,y\n0,0,1\n") == "line 2 (row 1): outcome present for unit with a = 0");
    CHECK(error_of("w1,a,y\n0,1,0.5\n0,1,\n") == "line 3 (row 2): missing outcome for observed unit");
    CHECK(error_of("w1,a,y,z\n") == "line 1: unknown column 'z'");
    CHECK(error_of("w1,w1,a,y\n") == "line 1: bad covariate column 'w1'");
    CHECK(error_of("w2,a,y\n") == "line 1: covariate columns must be w1..w1");
    CHECK(error_of("w1,a\n") == "line 1: missing column 'y'");
    CHECK(error_of("w1,a,y\n0,2,\n") == "line 2 (row 1): a must be 0 or 1");
    CHECK(error_of("w1,a,y\nx,0,\n") == "line 2 (row 1): w1 is not a finite number");
    CHECK(error_of("w1,a,y\n0,0\n") == "line 2 (row 1): expected 3 fields, found 2");
    CHECK(error_of("w1,a,y\n0,1,3\n0,1,0\n", false) == "outcomes outside [0, 1] require scaling");
    CHECK(error_of("w1,a,y\n") == "empty dataset");
    CHECK_THROWS_AS(read_data_csv_file("/nonexistent/file.csv"), TmleError);
}

TEST_CASE("bandwidth choices") {
    CHECK(parse_bandwidth_choice("default", 5, 1).rule == BandwidthChoice::Rule::Default);
    const BandwidthChoice cv = parse_bandwidth_choice("cv", 4, 9);
    CHECK(cv.rule == BandwidthChoice::Rule::CrossValidated);
    CHECK(cv.folds == 4);
    CHECK(cv.seed == 9);
    CHECK(parse_bandwidth_choice("fixed:0.3", 5, 1).fixed.value() == Bandwidth(0.3));
    CHECK(parse_bandwidth_choice("fixed:0.3;0.4", 5, 1).fixed.value() ==
          Bandwidth(std::vector<double>{0.3, 0.4}));
    CHECK_THROWS_AS(parse_bandwidth_choice("fixed:abc", 5, 1), TmleError);
    CHECK_THROWS_AS(parse_bandwidth_choice("silverman", 5, 1), TmleError);
}

TEST_CASE("atomic writes") {
    const fs::path dir = scratch_dir() / "nested";
    const fs::path target = dir / "out.txt";
    write_file_atomic(target, "first\n");
    write_file_atomic(target, "second\n");
    CHECK(slurp(target) == "second\n");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
    CHECK(entries == 1);
}

TEST_CASE("usage errors") {
    CHECK(run({}).code != 0);
    CHECK(run({"frobnicate"}).code != 0);
    const CliResult v = run({"--version"});
    CHECK(v.code == 0);
    CHECK(v.out.find(version()) != std::string::npos);
    const CliResult e = run({"estimate", "/nonexistent.csv"});
    CHECK(e.code == 1);
    CHECK(e.err.rfind("sotmle: error: ", 0) == 0);
}

TEST_CASE("estimate on complete data is the sample mean") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Dataset d(2);
    double sum = 0.0;
    for (int i = 0; i < 80; ++i) {
        const double w[2] = {u(rng), u(rng)};
        const double y = u(rng) < 0.4 ? 1.0 : 0.0;
        sum += y;
        d.add(w, 1, y);
    }
    const fs::path csv = scratch_dir() / "complete.csv";
    write_csv(csv, d);
    const CliResult r = run({"estimate", csv.string()});
    REQUIRE(r.code == 0);
    const auto kv = parse_report(r.out);
    CHECK(std::stod(kv.at("psi")) == doctest::Approx(sum / 80.0).epsilon(1e-9));
    CHECK(kv.at("estimator") == "tmle1");
    CHECK(kv.at("outcome_scale") == "identity");
    CHECK(r.out.rfind("# sotmle " + version() + " seed=1 config_hash=", 0) == 0);
}

TEST_CASE("estimate with cross-validated bandwidth matches the library") {
    auto rng = make_stream(72, {});
    const Dataset d = generate(dgp_d1(), 300, rng);
    const fs::path csv = scratch_dir() / "d1.csv";
    write_csv(csv, d);
    const CliResult r = run({"estimate", csv.string(), "--estimator", "tmle1star", "--bandwidth", "cv", "--seed", "4"});
    REQUIRE(r.code == 0);
    const auto kv = parse_report(r.out);

    EstimatorConfig c;
    c.estimator = EstimatorKind::Tmle1Star;
    c.bandwidth = BandwidthChoice::cross_validated(5, 4);
    const EstimateReport lib = estimate_with_learners(read_data_csv_file(csv).data, GlmLearner(), GlmLearner(), c);
    CHECK(kv.at("psi") == number(lib.psi));
    CHECK(kv.at("se") == number(lib.se));
    CHECK(kv.at("bandwidth") == lib.bandwidth_used->to_string());

    const CliResult bw = run({"bandwidth", csv.string(), "--estimator", "tmle1star", "--seed", "4"});
    REQUIRE(bw.code == 0);
    CHECK(bw.out.find("selected=" + lib.bandwidth_used->to_string()) != std::string::npos);
    CHECK(bw.out.find("h,rss,variance,bias,criterion,psi,failed\n") != std::string::npos);
}

TEST_CASE("treatment effect subcommand matches the library") {
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Dataset d = testing::random_dataset(rng, 250, 2);
    std::vector<int> t(d.size());
    for (auto& x : t) x = u(rng) < 0.5 ? 1 : 0;
    const fs::path csv = scratch_dir() / "ate.csv";
    write_csv(csv, d, t, 10.0, 30.0);
    const CliResult r = run({"ate", csv.string()});
    REQUIRE(r.code == 0);
    const auto kv = parse_report(r.out);

    const CsvData parsed = read_data_csv_file(csv);
    REQUIRE(parsed.scaled);
    EstimatorConfig c;
    const AteReport lib = ate(parsed.data, parsed.treatment, GlmLearner(), GlmLearner(), c, parsed.scale);
    CHECK(kv.at("diff") == number(lib.diff));
    CHECK(kv.at("se") == number(lib.se));
    CHECK(std::stod(kv.at("treated.psi")) == doctest::Approx(lib.psi1).epsilon(1e-15));
    CHECK(std::stod(kv.at("psi1")) > 10.0);

    const fs::path no_t = scratch_dir() / "no_t.csv";
    write_csv(no_t, d);
    CHECK(run({"ate", no_t.string()}).code == 1);
}

TEST_CASE("simulate output is reproducible and independent of threads") {
    const fs::path dir = scratch_dir();
    const std::vector<std::string> base{"simulate", "--n", "120", "--p", "0.5", "--q", "0.5,0.2", "--reps", "3",
                                        "--seed", "8", "--estimator", "tmle1,tmle2"};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    const CliResult a = run(with({"--out", (dir / "a.csv").string()}));
    const CliResult b = run(with({"--out", (dir / "b.csv").string(), "--threads", "3"}));
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
    CHECK(a.out == slurp(dir / "a.txt"));
    const std::string text = slurp(dir / "a.csv");
    CHECK(text.find("dgp=d1 psi0=") != std::string::npos);
    CHECK(text.find("\nestimator,n,p,q,sqrt_n_abs_bias,rvar,coverage,coverage_mc_se,failures\n") != std::string::npos);

    std::vector<std::string> reseeded = with({"--out", (dir / "c.csv").string()});
    *(std::find(reseeded.begin(), reseeded.end(), "--seed") + 1) = "9";
    const CliResult c = run(reseeded);
    REQUIRE(c.code == 0);
    CHECK(slurp(dir / "c.csv") != slurp(dir / "a.csv"));
}

TEST_CASE("oracle subcommand and setting precedence") {
    const std::vector<std::string> base{"oracle", "--dgp", "d1", "--draws", "65536"};
    auto seed_of = [](const std::string& out) {
        const auto s = out.find("seed=");
        return out.substr(s + 5, out.find(' ', s) - s - 5);
    };
    const CliResult def = run(base);
    REQUIRE(def.code == 0);
    CHECK(seed_of(def.out) == "20160101");
    std::istringstream in(def.out);
    const auto parsed = read_oracle_constants(in);
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].M == 65536);
    CHECK(std::abs(parsed[0].psi0.value - frozen_oracle("d1")->psi0.value) < 5.0 * parsed[0].psi0.mc_se);

    const fs::path cfg = scratch_dir() / "settings.ini";
    std::ofstream(cfg) << "seed=7\n";
    std::vector<std::string> with_cfg = base;
    with_cfg.insert(with_cfg.end(), {"--config", cfg.string()});
    CHECK(seed_of(run(with_cfg).out) == "7");

    ::setenv("SOTMLE_SEED", "5", 1);
    CHECK(seed_of(run(base).out) == "5");
    CHECK(seed_of(run(with_cfg).out) == "5");
    std::vector<std::string> with_flag = with_cfg;
    with_flag.insert(with_flag.end(), {"--seed", "6"});
    CHECK(seed_of(run(with_flag).out) == "6");
    ::unsetenv("SOTMLE_SEED");
}

}  // TEST_SUITE
