#include "drivelab/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

namespace drivelab::eval {

const char* to_string(ControllerKind k) {
    switch (k) {
        case ControllerKind::Reference: return "reference";
        case ControllerKind::Naive: return "naive";
        case ControllerKind::Safe: return "safe";
    }
    return "?";
}

namespace {

struct TrackRun {
    TrackEval eval;
    std::uint64_t metric_queries = 0;
    std::uint64_t takeover_queries = 0;
    double mse_sum = 0;
    std::int64_t policy_steps = 0;
    std::int64_t takeover_steps = 0;
    sim::Trajectory trajectory;
};

TrackRun run_track(const policies::PrimaryPolicy* primary, const policies::SafetyPolicy* safety,
                   const sim::Track& track, const EvalConfig& cfg, std::uint64_t traffic_seed,
                   bool record) {
    TrackRun run;
    run.eval.track_id = track.spec().id;

    const int ego_lane = track.lane_count() / 2;
    auto traffic =
        cfg.traffic_cars > 0 ? sim::spawn_traffic(track, cfg.traffic_cars, traffic_seed) : std::vector<sim::CarState>{};
    sim::WorldState world =
        sim::make_world(track, 0.0, ego_lane, 0.5 * track.speed_limit(), std::move(traffic));

    reference::QueryLedger ledger;
    const std::int64_t step_cap =
        static_cast<std::int64_t>(cfg.laps_target * track.length() / 1.5 * 30.0);
    // stall guard: a policy braking to a standstill would otherwise burn the cap
    double last_distance = 0;
    std::int64_t last_progress_step = 0;

    while (world.running()) {
        if (world.ego_distance / track.length() >= cfg.laps_target) {
            world.halted = sim::Halt::Finished;
            break;
        }
        if (world.time_step >= step_cap) break;
        if (world.time_step - last_progress_step > 1800) break;  // < 3 m progress per minute
        if (world.ego_distance - last_distance > 3.0) {
            last_distance = world.ego_distance;
            last_progress_step = world.time_step;
        }

        sim::Action action;
        bool policy_driven = false;
        int latched_lane = -1;
        if (cfg.strategy == ControllerKind::Reference) {
            const auto rd = reference::reference_decide(world, reference::kEgoIndex);
            action = rd.action;
            latched_lane = rd.target_lane;
        } else if (cfg.strategy == ControllerKind::Naive) {
            const auto obs = perception::observe(world);
            action = policies::primary_act(*primary, obs).action;
            policy_driven = true;
        } else {
            const auto obs = perception::observe(world);
            const auto d = policies::safe_strategy_act(*primary, *safety, obs, world, ledger);
            action = d.action;
            policy_driven = d.tag == sim::ControllerTag::Primary;
            latched_lane = d.latched_lane;
            if (!policy_driven) ++run.takeover_steps;
        }

        if (policy_driven) {
            const auto ref =
                reference::query_reference(world, ledger, reference::QueryKind::Metric);
            const double d = action.steer - ref.steer;
            run.mse_sum += d * d;
            ++run.policy_steps;
        }
        if (record)
            run.trajectory.steps.push_back({world, action,
                                            policy_driven ? sim::ControllerTag::Primary
                                                          : sim::ControllerTag::Reference});
        if (latched_lane >= 0) world.ego.lane_index = latched_lane;
        sim::step(world, action);
    }
    if (record) {
        run.trajectory.final_state = world;
        run.trajectory.terminal = world.halted;
    }

    run.eval.steps = world.time_step;
    run.eval.halted = world.halted;
    run.eval.damage = world.damage;
    run.eval.laps =
        std::clamp(world.ego_distance / track.length(), 0.0, static_cast<double>(cfg.laps_target));
    run.eval.damage_per_lap = static_cast<double>(world.damage) / std::max(run.eval.laps, 0.01);
    if (run.policy_steps > 0)
        run.eval.steering_mse = run.mse_sum / static_cast<double>(run.policy_steps);
    run.eval.takeover_fraction =
        world.time_step > 0
            ? static_cast<double>(run.takeover_steps) / static_cast<double>(world.time_step)
            : 0.0;
    run.metric_queries = ledger.totals().metric;
    run.takeover_queries = ledger.totals().takeover;
    return run;
}

}  // namespace

EvalReport evaluate(const policies::PrimaryPolicy* primary, const policies::SafetyPolicy* safety,
                    const std::vector<const sim::Track*>& tracks, const EvalConfig& cfg,
                    std::vector<sim::Trajectory>* trajectories_out) {
    if (cfg.laps_target < 1) throw std::invalid_argument("evaluate: laps_target must be >= 1");
    if (tracks.empty()) throw std::invalid_argument("evaluate: no tracks");
    if (cfg.strategy != ControllerKind::Reference && primary == nullptr)
        throw std::invalid_argument("evaluate: primary policy required");
    if (cfg.strategy == ControllerKind::Safe && safety == nullptr)
        throw std::invalid_argument("evaluate: safe strategy requires a safety policy");

    std::vector<TrackRun> runs(tracks.size());
    auto work = [&](std::size_t i) {
        runs[i] = run_track(primary, safety, *tracks[i], cfg,
                            derive_seed(cfg.seed, "eval-traffic", i), trajectories_out != nullptr);
    };
    if (cfg.threads > 1 && tracks.size() > 1) {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        const int n_threads = std::min<int>(cfg.threads, static_cast<int>(tracks.size()));
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < tracks.size(); i = next.fetch_add(1))
                    work(i);
            });
        for (auto& th : pool) th.join();
    } else {
        for (std::size_t i = 0; i < tracks.size(); ++i) work(i);
    }

    EvalReport report;
    double laps_sum = 0;
    std::int64_t damage_sum = 0;
    double mse_sum = 0;
    std::int64_t policy_steps = 0;
    std::int64_t takeover_steps = 0;
    std::int64_t total_steps = 0;
    if (trajectories_out != nullptr)
        for (auto& r : runs) trajectories_out->push_back(std::move(r.trajectory));
    for (auto& r : runs) {
        report.per_track.push_back(r.eval);
        laps_sum += r.eval.laps;
        damage_sum += r.eval.damage;
        mse_sum += r.mse_sum;
        policy_steps += r.policy_steps;
        takeover_steps += r.takeover_steps;
        total_steps += r.eval.steps;
        report.metric_queries += r.metric_queries;
        report.takeover_queries += r.takeover_queries;
    }
    report.avg_laps = laps_sum / static_cast<double>(runs.size());
    report.damage_per_lap = static_cast<double>(damage_sum) / std::max(laps_sum, 0.01);
    if (policy_steps > 0) report.steering_mse = mse_sum / static_cast<double>(policy_steps);
    report.takeover_fraction =
        total_steps > 0 ? static_cast<double>(takeover_steps) / static_cast<double>(total_steps)
                        : 0.0;
    return report;
}

std::vector<RankedExample> rank_observations(const imitation::Dataset& dataset,
                                             const policies::PrimaryPolicy& primary,
                                             const policies::SafetyPolicy& safety) {
    std::vector<RankedExample> out;
    out.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto act = policies::primary_act(primary, dataset.examples[i].obs);
        const auto v = policies::safety_classify(safety, act.features);
        out.push_back({i, v.p_safe});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const RankedExample& a, const RankedExample& b) {
                         return a.p_safe < b.p_safe;
                     });
    return out;
}

void export_ranked_csv(const std::filesystem::path& path, const imitation::Dataset& dataset,
                       const std::vector<RankedExample>& ranked, int top_n) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_ranked_csv: cannot open " + path.string());
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(top_n), ranked.size());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(i);  // most unsafe
    const std::size_t hi_start = std::max(ranked.size() - n, n);
    for (std::size_t i = hi_start; i < ranked.size(); ++i) rows.push_back(i);  // most safe
    char buf[32];
    for (std::size_t r : rows) {
        const auto& re = ranked[r];
        const auto& ex = dataset.examples[re.index];
        std::string line;
        std::snprintf(buf, sizeof(buf), "%.17g", re.p_safe);
        line += buf;
        line += ',';
        line += std::to_string(ex.source_iteration);
        line += ',';
        line += sim::to_string(ex.controller_tag);
        line += ',';
        line += std::to_string(ex.episode_id);
        line += ',';
        line += std::to_string(ex.step_in_episode);
        for (double v : ex.labels.to_array()) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            line += ',';
            line += buf;
        }
        for (int i = 0; i < perception::kObsSize; ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g",
                          static_cast<double>(ex.obs.grid[static_cast<std::size_t>(i)]));
            line += ',';
            line += buf;
        }
        line += '\n';
        out << line;
    }
}

// ---------------------------------------------------------------------------
// run summaries: curve CSV + SVG plots

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

void write_svg_lines(const std::filesystem::path& path, const std::string& title,
                     const std::vector<Series>& series) {
    constexpr double W = 640, H = 400, ML = 60, MR = 170, MT = 40, MB = 45;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (!any) {
                xmin = xmax = x;
                ymin = ymax = y;
                any = true;
            } else {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    ymin = std::min(ymin, 0.0);
    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_svg_lines: cannot open " + path.string());
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H
        << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    // axes
    out << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
        << H - MB << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x=\"" << ML - 6 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(std::round(yv * 1000) / 1000)
            << "</text>\n";
    }
    const int xticks = std::min<int>(6, static_cast<int>(std::lround(xmax - xmin)) + 1);
    for (int i = 0; i < xticks; ++i) {
        const double xv = xmin + (xmax - xmin) * i / std::max(1, xticks - 1);
        out << "<text x=\"" << px(xv) << "\" y=\"" << H - MB + 16
            << "\" text-anchor=\"middle\" font-size=\"11\">"
            << fmt(std::round(xv * 100) / 100) << "</text>\n";
    }
    out << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 8
        << "\" text-anchor=\"middle\" font-size=\"12\">iteration</text>\n";
    int ci = 0;
    for (const auto& s : series) {
        const char* color = kColors[ci % 8];
        if (!s.points.empty()) {
            out << "<polyline fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"1.8\" points=\"";
            for (auto [x, y] : s.points) out << px(x) << "," << py(y) << " ";
            out << "\"/>\n";
            for (auto [x, y] : s.points)
                out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y)
                    << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        const double ly = MT + 18 * ci;
        out << "<line x1=\"" << W - MR + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - MR + 34
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << W - MR + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
            << s.label << "</text>\n";
        ++ci;
    }
    out << "</svg>\n";
}

}  // namespace

void summarize_run(const std::vector<CurvePoint>& points,
                   const std::filesystem::path& out_dir, const std::string& prefix) {
    if (points.empty()) throw std::invalid_argument("summarize_run: no points");
    std::filesystem::create_directories(out_dir);

    {
        std::ofstream out(out_dir / (prefix + "_curves.csv"));
        if (!out) throw std::runtime_error("summarize_run: cannot write curves csv");
        out << "iteration,strategy,traffic,avg_laps,damage_per_lap,steering_mse,"
               "takeover_fraction\n";
        for (const auto& p : points) {
            out << p.iteration << ',' << p.strategy << ',' << (p.traffic ? "on" : "off") << ','
                << fmt(p.report.avg_laps) << ',' << fmt(p.report.damage_per_lap) << ','
                << (p.report.steering_mse ? fmt(*p.report.steering_mse) : std::string("nan"))
                << ',' << fmt(p.report.takeover_fraction) << '\n';
        }
    }

    struct Metric {
        const char* file;
        const char* title;
        double (*get)(const EvalReport&);
    };
    const Metric metrics[] = {
        {"laps", "average laps", [](const EvalReport& r) { return r.avg_laps; }},
        {"damage", "damage per lap", [](const EvalReport& r) { return r.damage_per_lap; }},
        {"mse", "steering mse",
         [](const EvalReport& r) { return r.steering_mse.value_or(std::nan("")); }},
        {"takeover", "takeover fraction",
         [](const EvalReport& r) { return r.takeover_fraction; }},
    };
    for (const auto& m : metrics) {
        std::map<std::string, Series> by_key;
        for (const auto& p : points) {
            const double v = m.get(p.report);
            if (std::isnan(v)) continue;
            const std::string key = p.strategy + std::string(p.traffic ? " / traffic" : " / clear");
            auto& s = by_key[key];
            s.label = key;
            s.points.push_back({static_cast<double>(p.iteration), v});
        }
        std::vector<Series> series;
        for (auto& [k, s] : by_key) {
            std::sort(s.points.begin(), s.points.end());
            series.push_back(std::move(s));
        }
        write_svg_lines(out_dir / (prefix + "_" + m.file + ".svg"), m.title, series);
    }
}

}  // namespace drivelab::eval
