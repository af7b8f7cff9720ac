// drivelab command line: tracks / run / eval / compare / rank
//
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "drivelab/config.hpp"
#include "drivelab/imitation.hpp"

namespace dl = drivelab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct ValidationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// tracks

int cmd_tracks_list(const std::filesystem::path& tracks_dir) {
    const auto specs = dl::sim::load_track_dir(tracks_dir);
    int train = 0, test = 0;
    std::printf("%-12s %-6s %6s %10s %10s %12s\n", "id", "kind", "lanes", "lane_w[m]",
                "limit[m/s]", "length[m]");
    for (const auto& spec : specs) {
        const auto track = dl::sim::build_track(spec);
        std::printf("%-12s %-6s %6d %10.2f %10.1f %12.2f\n", spec.id.c_str(),
                    spec.is_test ? "test" : "train", spec.lane_count, spec.lane_width,
                    spec.speed_limit, track.length());
        (spec.is_test ? test : train)++;
    }
    std::printf("%d tracks: %d train, %d test\n", train + test, train, test);
    return kExitOk;
}

int cmd_tracks_validate(const std::filesystem::path& tracks_dir,
                        const std::vector<std::string>& files) {
    std::vector<std::filesystem::path> paths;
    if (files.empty()) {
        for (const auto& e : std::filesystem::directory_iterator(tracks_dir))
            if (e.path().extension() == ".track") paths.push_back(e.path());
        std::sort(paths.begin(), paths.end());
    } else {
        for (const auto& f : files) paths.emplace_back(f);
    }
    if (paths.empty()) {
        std::fprintf(stderr, "no track files found\n");
        return kExitValidation;
    }
    bool ok = true;
    for (const auto& p : paths) {
        try {
            const auto spec = dl::sim::load_track_spec(p);
            const auto track = dl::sim::build_track(spec);
            std::printf("OK   %s (%s, %.2f m)\n", p.string().c_str(), spec.id.c_str(),
                        track.length());
        } catch (const std::exception& e) {
            std::printf("FAIL %s: %s\n", p.string().c_str(), e.what());
            ok = false;
        }
    }
    return ok ? kExitOk : kExitValidation;
}

int cmd_tracks_render(const std::filesystem::path& tracks_dir, const std::string& id) {
    const auto specs = dl::sim::load_track_dir(tracks_dir);
    for (const auto& spec : specs) {
        if (spec.id != id) continue;
        const auto track = dl::sim::build_track(spec);
        // bounding box of the centerline
        double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
        for (double s = 0; s < track.length(); s += 1.0) {
            const auto p = track.centerline_pose(s).pos;
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        const int W = 100, H = 34;
        std::vector<std::string> canvas(H, std::string(W, ' '));
        auto plot = [&](double x, double y, char c) {
            const int cx = static_cast<int>((x - xmin) / (xmax - xmin + 1e-9) * (W - 1));
            const int cy = static_cast<int>((y - ymin) / (ymax - ymin + 1e-9) * (H - 1));
            canvas[static_cast<std::size_t>(H - 1 - cy)][static_cast<std::size_t>(cx)] = c;
        };
        for (double s = 0; s < track.length(); s += 1.0)
            plot(track.centerline_pose(s).pos.x, track.centerline_pose(s).pos.y, '#');
        plot(track.centerline_pose(0).pos.x, track.centerline_pose(0).pos.y, 'S');
        std::printf("%s: %.1f m, %d lanes, limit %.1f m/s\n", spec.id.c_str(), track.length(),
                    spec.lane_count, spec.speed_limit);
        for (const auto& row : canvas) std::printf("%s\n", row.c_str());
        return kExitOk;
    }
    std::fprintf(stderr, "unknown track id '%s'\n", id.c_str());
    return kExitValidation;
}

// ---------------------------------------------------------------------------
// run

dl::imitation::IterationPlan plan_from_config(const dl::config::Config& cfg,
                                              std::uint64_t seed_override, bool has_seed,
                                              int threads) {
    dl::imitation::IterationPlan plan;
    plan.seed = has_seed ? seed_override
                         : static_cast<std::uint64_t>(cfg.get_int("run.seed", 1));
    plan.n_iterations = static_cast<int>(cfg.get_int("imitation.n_iterations", 3));
    plan.d0_size = static_cast<int>(cfg.get_int("imitation.d0_size", 3000));
    plan.dsafe_size = static_cast<int>(cfg.get_int("imitation.dsafe_size", 1000));
    plan.iteration_sizes = cfg.get_int_list("imitation.iteration_sizes", {3000, 3000, 1000});
    plan.beta_schedule = cfg.get_double_list("imitation.beta", {});
    plan.dagger_oversample = cfg.get_double("imitation.dagger_oversample", 1.0);
    plan.tau = cfg.get_double("imitation.tau", 0.0);
    plan.target_safe_fraction = cfg.get_double("imitation.target_safe_fraction", 0.8);
    plan.lookahead_steps = static_cast<int>(cfg.get_int("imitation.lookahead_steps", 0));
    plan.traffic_cars = static_cast<int>(cfg.get_int("sim.traffic_cars", 8));
    plan.validation_fraction = cfg.get_double("imitation.validation_fraction", 0.1);
    plan.reduction_mode = cfg.get_bool("imitation.reduction_mode", false);
    plan.w_aux = cfg.get_double("imitation.w_aux", 0.5);
    plan.primary_hidden = cfg.get_int_list("nn.hidden", {128, 64});
    plan.safety_hidden = cfg.get_int_list("nn.safety_hidden", {32, 32});
    plan.train.batch_size = static_cast<int>(cfg.get_int("nn.batch_size", 64));
    plan.train.momentum = cfg.get_double("nn.momentum", 0.9);
    plan.train.weight_decay = cfg.get_double("nn.weight_decay", 0.001);
    plan.train.lr = cfg.get_double("nn.lr", 0.001);
    plan.train.lr_drop_factor = cfg.get_double("nn.lr_drop_factor", 5.0);
    plan.train.plateau_patience = static_cast<int>(cfg.get_int("nn.plateau_patience", 3));
    plan.train.early_stop_rel = cfg.get_double("nn.early_stop_rel", 0.05);
    plan.train.max_epochs = static_cast<int>(cfg.get_int("nn.max_epochs", 40));
    plan.evaluate_each_iteration = cfg.get_bool("eval.per_iteration", true);
    plan.eval_traffic = cfg.get_int_list("eval.traffic", {0, plan.traffic_cars});
    plan.eval_laps = static_cast<int>(cfg.get_int("eval.laps", 3));
    plan.episode_cap = static_cast<int>(cfg.get_int("imitation.episode_cap", 3000));
    plan.threads = threads;
    try {
        plan.validate();
    } catch (const std::exception& e) {
        throw ValidationFailure(std::string("config: ") + e.what());
    }
    return plan;
}

void write_meta(const std::filesystem::path& dir, const std::string& regime,
                const dl::imitation::RunReport& report, const std::string& content_hash,
                std::size_t dataset_size) {
    std::ofstream out(dir / "run_meta.txt");
    out << "regime = " << regime << "\n";
    out << "seed = " << report.seed << "\n";
    out << "content_hash = " << content_hash << "\n";
    out << "total_label_queries = " << report.total_queries.label << "\n";
    out << "total_takeover_queries = " << report.total_queries.takeover << "\n";
    out << "dataset_size = " << dataset_size << "\n";
    out << "status = complete\n";
}

std::vector<dl::eval::CurvePoint> gather_points(const dl::imitation::RunReport& report) {
    std::vector<dl::eval::CurvePoint> points;
    for (const auto& ir : report.iterations)
        for (const auto& p : ir.evals) points.push_back(p);
    return points;
}

int cmd_run(const std::string& config_path, const std::string& out_dir_flag,
            std::uint64_t seed_override, bool has_seed, int threads,
            const std::string& tracks_dir) {
    const auto cfg = dl::config::Config::load(config_path);
    const std::string regime = cfg.get_string("run.regime", "");
    const std::string name = cfg.get_string("run.name", "run");
    if (regime != "supervised" && regime != "dagger" && regime != "safedagger")
        throw ValidationFailure("run.regime: must be supervised|dagger|safedagger, got '" +
                                regime + "'");
    const auto plan = plan_from_config(cfg, seed_override, has_seed, threads);
    if (const auto unread = cfg.unread_keys(); !unread.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unread) msg += " " + k;
        throw ValidationFailure(msg);
    }

    const auto library = dl::imitation::TrackLibrary::load(tracks_dir);
    if (library.test_indices.empty() && plan.evaluate_each_iteration)
        throw ValidationFailure("track set has no test tracks to evaluate on");

    std::uint64_t hash = fnv1a(cfg.text());
    for (const auto& t : library.tracks) hash = fnv1a(dl::sim::format_track_spec(t.spec()), hash);
    char hash_hex[24];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(hash));

    std::filesystem::path run_dir;
    if (!out_dir_flag.empty()) {
        run_dir = out_dir_flag;
    } else {
        run_dir = std::filesystem::path("runs") / (name + "-" + regime + "-" + timestamp());
    }
    std::filesystem::create_directories(run_dir);
    {
        std::ofstream marker(run_dir / "INCOMPLETE");
        marker << "run in progress or aborted\n";
    }
    {
        std::ofstream c(run_dir / "config.cfg");
        c << cfg.text();
    }

    dl::imitation::RunReport report;
    std::size_t dataset_size = 0;
    if (regime == "supervised") {
        auto r = dl::imitation::run_supervised(plan, library);
        dl::policies::save_primary(run_dir / "primary_000.model", r.primary);
        dl::imitation::save_dataset(run_dir / "dataset_final.dlds", r.dataset);
        dataset_size = r.dataset.size();
        report = std::move(r.report);
    } else if (regime == "dagger") {
        auto r = dl::imitation::run_dagger(plan, library);
        for (std::size_t i = 0; i < r.primaries.size(); ++i) {
            char fn[64];
            std::snprintf(fn, sizeof(fn), "primary_%03zu.model", i);
            dl::policies::save_primary(run_dir / fn, r.primaries[i]);
        }
        dl::imitation::save_dataset(run_dir / "dataset_final.dlds", r.dataset);
        dataset_size = r.dataset.size();
        report = std::move(r.report);
    } else {
        auto r = dl::imitation::run_safedagger(plan, library);
        for (std::size_t i = 0; i < r.primaries.size(); ++i) {
            char fn[64];
            std::snprintf(fn, sizeof(fn), "primary_%03zu.model", i);
            dl::policies::save_primary(run_dir / fn, r.primaries[i]);
            std::snprintf(fn, sizeof(fn), "safety_%03zu.model", i);
            dl::policies::save_safety(run_dir / fn, r.safeties[i]);
        }
        dl::imitation::save_dataset(run_dir / "dataset_final.dlds", r.dataset);
        dl::imitation::save_dataset(run_dir / "dsafe.dlds", r.dsafe);
        dataset_size = r.dataset.size();
        report = std::move(r.report);
    }

    dl::imitation::write_run_report_csv(report, run_dir / "run_report.csv");
    dl::imitation::write_run_summary_text(report, run_dir / "run_summary.txt");
    if (const auto points = gather_points(report); !points.empty())
        dl::eval::summarize_run(points, run_dir, "curves");
    write_meta(run_dir, regime, report, hash_hex, dataset_size);
    std::filesystem::remove(run_dir / "INCOMPLETE");

    std::printf("run complete: %s\n", run_dir.string().c_str());
    std::printf("label queries: %llu\n",
                static_cast<unsigned long long>(report.total_queries.label));
    std::printf("takeover queries: %llu\n",
                static_cast<unsigned long long>(report.total_queries.takeover));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& model_path, const std::string& safety_path,
             const std::string& strategy, const std::string& tracks_dir,
             const std::string& track_set, int traffic, int laps, std::uint64_t seed,
             int threads, const std::string& out_csv, const std::string& dump_dir) {
    dl::eval::EvalConfig cfg;
    cfg.laps_target = laps;
    cfg.traffic_cars = traffic;
    cfg.seed = seed;
    cfg.threads = threads;
    if (strategy == "naive") cfg.strategy = dl::eval::ControllerKind::Naive;
    else if (strategy == "safe") cfg.strategy = dl::eval::ControllerKind::Safe;
    else if (strategy == "reference") cfg.strategy = dl::eval::ControllerKind::Reference;
    else throw ValidationFailure("--strategy must be naive|safe|reference");

    if (cfg.strategy != dl::eval::ControllerKind::Reference && model_path.empty())
        throw ValidationFailure("--model is required for the " + strategy + " strategy");
    if (cfg.strategy == dl::eval::ControllerKind::Safe && safety_path.empty())
        throw ValidationFailure("--safety is required for the safe strategy");

    const auto library = dl::imitation::TrackLibrary::load(tracks_dir);
    std::vector<const dl::sim::Track*> tracks;
    if (track_set == "test") tracks = library.test();
    else if (track_set == "train") tracks = library.train();
    else if (track_set == "all") tracks = library.all();
    else {
        for (const auto& t : library.tracks)
            if (t.spec().id == track_set) tracks.push_back(&t);
        if (tracks.empty())
            throw ValidationFailure("--tracks: unknown set or track id '" + track_set + "'");
    }

    std::optional<dl::policies::PrimaryPolicy> primary;
    std::optional<dl::policies::SafetyPolicy> safety;
    if (!model_path.empty()) {
        try {
            primary = dl::policies::load_primary(model_path);
        } catch (const std::exception& e) {
            throw ValidationFailure(std::string("--model: ") + e.what());
        }
    }
    if (!safety_path.empty()) {
        try {
            safety = dl::policies::load_safety(safety_path);
        } catch (const std::exception& e) {
            throw ValidationFailure(std::string("--safety: ") + e.what());
        }
    }

    std::vector<dl::sim::Trajectory> trajectories;
    const auto report = dl::eval::evaluate(primary ? &*primary : nullptr,
                                           safety ? &*safety : nullptr, tracks, cfg,
                                           dump_dir.empty() ? nullptr : &trajectories);

    std::ofstream out;
    std::ostream* os = &std::cout;
    if (!out_csv.empty()) {
        out.open(out_csv);
        if (!out) throw std::runtime_error("cannot open " + out_csv);
        os = &out;
    }
    auto fmt = [](double v) {
        char b[40];
        std::snprintf(b, sizeof(b), "%.17g", v);
        return std::string(b);
    };
    *os << "track,laps,damage,damage_per_lap,steering_mse,takeover_fraction,steps,halted\n";
    for (const auto& t : report.per_track) {
        *os << t.track_id << ',' << fmt(t.laps) << ',' << t.damage << ','
            << fmt(t.damage_per_lap) << ','
            << (t.steering_mse ? fmt(*t.steering_mse) : std::string("nan")) << ','
            << fmt(t.takeover_fraction) << ',' << t.steps << ',' << dl::sim::to_string(t.halted)
            << '\n';
    }
    *os << "ALL," << fmt(report.avg_laps) << ",," << fmt(report.damage_per_lap) << ','
        << (report.steering_mse ? fmt(*report.steering_mse) : std::string("nan")) << ','
        << fmt(report.takeover_fraction) << ",,\n";

    if (!dump_dir.empty()) {
        std::filesystem::create_directories(dump_dir);
        for (std::size_t i = 0; i < trajectories.size(); ++i)
            dl::sim::write_trajectory_csv(
                trajectories[i],
                std::filesystem::path(dump_dir) / (tracks[i]->spec().id + "_trajectory.csv"));
    }
    std::fprintf(stderr, "avg laps %.3f, damage/lap %.3f, takeover %.3f\n", report.avg_laps,
                 report.damage_per_lap, report.takeover_fraction);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// compare

std::map<std::string, std::string> read_meta(const std::filesystem::path& dir) {
    std::ifstream in(dir / "run_meta.txt");
    if (!in) throw ValidationFailure("not a run directory (missing run_meta.txt): " + dir.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r\n");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b, const std::string& out_path) {
    const auto a = read_meta(dir_a);
    const auto b = read_meta(dir_b);
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    out << "run,regime,seed,label_queries,takeover_queries,dataset_size\n";
    auto row = [&](const std::string& dir, const std::map<std::string, std::string>& m) {
        out << dir << ',' << m.at("regime") << ',' << m.at("seed") << ','
            << m.at("total_label_queries") << ',' << m.at("total_takeover_queries") << ','
            << m.at("dataset_size") << '\n';
    };
    row(dir_a, a);
    row(dir_b, b);
    const double qa = std::stod(a.at("total_label_queries"));
    const double qb = std::stod(b.at("total_label_queries"));
    out << "label_query_ratio_a_over_b," << (qb > 0 ? qa / qb : 0.0) << ",,,,\n";
    std::printf("label queries: %s=%g %s=%g ratio=%.4f\n", dir_a.c_str(), qa, dir_b.c_str(), qb,
                qb > 0 ? qa / qb : 0.0);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// rank

int cmd_rank(const std::string& dataset_path, const std::string& model_path,
             const std::string& safety_path, int top_n, const std::string& out_path) {
    dl::imitation::Dataset ds;
    dl::policies::PrimaryPolicy primary;
    dl::policies::SafetyPolicy safety;
    try {
        ds = dl::imitation::load_dataset(dataset_path);
        primary = dl::policies::load_primary(model_path);
        safety = dl::policies::load_safety(safety_path);
    } catch (const std::exception& e) {
        throw ValidationFailure(e.what());
    }
    const auto ranked = dl::eval::rank_observations(ds, primary, safety);
    dl::eval::export_ranked_csv(out_path, ds, ranked, top_n);
    std::printf("ranked %zu examples, wrote %s\n", ranked.size(), out_path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"drivelab: imitation-learning laboratory for 2D lane driving"};
    app.require_subcommand(1);

    std::string tracks_dir = "tracks";
    app.add_option("--tracks-dir", tracks_dir, "directory of .track files")
        ->capture_default_str();

    // tracks
    auto* tracks_cmd = app.add_subcommand("tracks", "inspect and validate track files");
    tracks_cmd->require_subcommand(1);
    tracks_cmd->add_subcommand("list", "list shipped tracks");
    auto* tracks_validate = tracks_cmd->add_subcommand("validate", "check track invariants");
    std::vector<std::string> validate_files;
    tracks_validate->add_option("files", validate_files, "track files (default: shipped set)");
    auto* tracks_render = tracks_cmd->add_subcommand("render-ascii", "coarse track map");
    std::string render_id;
    tracks_render->add_option("id", render_id, "track id")->required();

    // run
    auto* run_cmd = app.add_subcommand("run", "run a training regime from a config file");
    std::string run_config, run_out;
    std::uint64_t run_seed = 0;
    int run_threads = 1;
    run_cmd->add_option("--config", run_config, "config file")->required();
    run_cmd->add_option("--out-dir", run_out, "run directory (default runs/<name>-<ts>)");
    auto* seed_opt = run_cmd->add_option("--seed", run_seed, "override run.seed");
    run_cmd->add_option("--threads", run_threads, "evaluation threads");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate saved policies on tracks");
    std::string eval_model, eval_safety, eval_strategy = "naive", eval_tracks = "test";
    std::string eval_out, eval_dump;
    int eval_traffic = 0, eval_laps = 3, eval_threads = 1;
    std::uint64_t eval_seed = 1;
    eval_cmd->add_option("--model", eval_model, "primary policy model file");
    eval_cmd->add_option("--safety", eval_safety, "safety policy model file");
    eval_cmd->add_option("--strategy", eval_strategy, "naive|safe|reference")
        ->capture_default_str();
    eval_cmd->add_option("--tracks", eval_tracks, "test|train|all|<track id>")
        ->capture_default_str();
    eval_cmd->add_option("--traffic", eval_traffic, "traffic cars (0 = off)")
        ->capture_default_str();
    eval_cmd->add_option("--laps", eval_laps, "laps target")->capture_default_str();
    eval_cmd->add_option("--seed", eval_seed, "traffic seed")->capture_default_str();
    eval_cmd->add_option("--threads", eval_threads, "track-parallel threads")
        ->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "write the report CSV here (default stdout)");
    eval_cmd->add_option("--dump-trajectories", eval_dump, "directory for trajectory CSVs");

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "compare query totals of two runs");
    std::string cmp_a, cmp_b, cmp_out = "compare.csv";
    compare_cmd->add_option("--a", cmp_a, "first run directory")->required();
    compare_cmd->add_option("--b", cmp_b, "second run directory")->required();
    compare_cmd->add_option("--out", cmp_out, "output file")->capture_default_str();

    // rank
    auto* rank_cmd = app.add_subcommand("rank", "rank dataset observations by p(safe)");
    std::string rank_dataset, rank_model, rank_safety, rank_out = "ranked.csv";
    int rank_top = 20;
    rank_cmd->add_option("--dataset", rank_dataset, "dataset file")->required();
    rank_cmd->add_option("--model", rank_model, "primary policy model")->required();
    rank_cmd->add_option("--safety", rank_safety, "safety policy model")->required();
    rank_cmd->add_option("--top", rank_top, "rows from each end")->capture_default_str();
    rank_cmd->add_option("--out", rank_out, "output CSV")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (tracks_cmd->parsed()) {
            if (tracks_cmd->get_subcommand("list")->parsed()) return cmd_tracks_list(tracks_dir);
            if (tracks_validate->parsed()) return cmd_tracks_validate(tracks_dir, validate_files);
            if (tracks_render->parsed()) return cmd_tracks_render(tracks_dir, render_id);
        }
        if (run_cmd->parsed())
            return cmd_run(run_config, run_out, run_seed, seed_opt->count() > 0, run_threads,
                           tracks_dir);
        if (eval_cmd->parsed())
            return cmd_eval(eval_model, eval_safety, eval_strategy, tracks_dir, eval_tracks,
                            eval_traffic, eval_laps, eval_seed, eval_threads, eval_out,
                            eval_dump);
        if (compare_cmd->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);
        if (rank_cmd->parsed())
            return cmd_rank(rank_dataset, rank_model, rank_safety, rank_top, rank_out);
    } catch (const ValidationFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const dl::config::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitValidation;
    } catch (const dl::sim::TrackError& e) {
        std::fprintf(stderr, "track error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitValidation;
}
