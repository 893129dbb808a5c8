// mdslite command-line front end.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mdslite/analysis.hpp"
#include "mdslite/bench.hpp"
#include "mdslite/config.hpp"
#include "mdslite/error.hpp"
#include "mdslite/giis.hpp"
#include "mdslite/gris.hpp"

using namespace mdslite;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path);
    }
}

std::string sibling(const std::string& path, const std::string& suffix) {
    std::filesystem::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stoi(item));
    }
    return out;
}

std::vector<std::string> parse_word_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::string describe(const RunReport& r) {
    std::ostringstream o;
    char buf[256];
    std::snprintf(buf, sizeof buf, "scenario=%s users=%d duration=%.1fs think=%.3fs\n",
                  r.config.scenario.c_str(), r.config.users, r.window.duration_s, r.window.think_s);
    o << buf;
    std::snprintf(buf, sizeof buf,
                  "issued=%llu completed_in_window=%llu errors=%llu throughput=%.3f/s bound=%.3f/s\n",
                  static_cast<unsigned long long>(r.issued),
                  static_cast<unsigned long long>(r.completed_in_window),
                  static_cast<unsigned long long>(r.errors), r.throughput, r.throughput_bound());
    o << buf;
    for (const auto& [cls, n] : r.errors_by_class) {
        o << "  error " << cls << ": " << n << "\n";
    }
    const auto& s = r.lifelines;
    std::snprintf(buf, sizeof buf,
                  "lifelines: complete=%zu incomplete=%zu residual<=5ms=%.1f%% max_residual=%.6fs\n",
                  s.complete, s.incomplete, 100.0 * s.residual_within_5ms, s.max_residual);
    o << buf;
    if (s.stats) {
        std::snprintf(buf, sizeof buf,
                      "ORT mean=%.6f median=%.6f p95=%.6f  RPT mean=%.6f median=%.6f p95=%.6f\n",
                      s.stats->ort.mean, s.stats->ort.median, s.stats->ort.p95, s.stats->rpt.mean,
                      s.stats->rpt.median, s.stats->rpt.p95);
        o << buf;
        for (Phase p : kAllPhases) {
            std::snprintf(buf, sizeof buf, "  %-20s mean=%.6f\n", std::string(phase_name(p)).c_str(),
                          s.stats->at(p).mean);
            o << buf;
        }
    }
    std::snprintf(buf, sizeof buf, "load-proxy mean=%.3f", r.mean_load_proxy);
    o << buf;
    if (r.mean_cpu_proxy) {
        std::snprintf(buf, sizeof buf, " cpu-proxy mean=%.3f", *r.mean_cpu_proxy);
        o << buf;
    }
    o << (r.overloaded ? " (overloaded by proxy)\n" : "\n");
    return o.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mdslite: desk-scale grid information service and benchmark"};
    app.require_subcommand(1);

    // gris
    auto* gris = app.add_subcommand("gris", "run a resource-level information server");
    std::string gris_config, gris_listen, gris_log, gris_ttl, gris_register_to;
    int gris_register_ttl = 0;
    gris->add_option("--config", gris_config, "config file")->required();
    gris->add_option("--listen", gris_listen, "host:port");
    gris->add_option("--log", gris_log, "event log path");
    gris->add_option("--cache-ttl", gris_ttl, "seconds, 0 or inf");
    gris->add_option("--register-to", gris_register_to, "directory host:port");
    gris->add_option("--register-ttl", gris_register_ttl, "registration ttl in seconds");

    // giis
    auto* giis = app.add_subcommand("giis", "run an aggregate directory server");
    std::string giis_config, giis_listen, giis_log, giis_ttl;
    double giis_sweep = 0;
    giis->add_option("--config", giis_config, "config file")->required();
    giis->add_option("--listen", giis_listen, "host:port");
    giis->add_option("--log", giis_log, "event log path");
    giis->add_option("--cache-ttl", giis_ttl, "seconds, 0 or inf");
    giis->add_option("--sweep-interval", giis_sweep, "seconds");

    // bench
    auto* bench = app.add_subcommand("bench", "closed-loop load generator");
    std::string b_target, b_base = "mds-vo-name=local", b_scope = "sub",
                          b_filter = "(objectclass=*)", b_attrs = "*", b_log, b_out,
                          b_scenario = "custom", b_identity, b_secret;
    int b_users = 1;
    double b_duration = 600, b_sample = 5, b_warmup = 0, b_timeout = 300;
    long b_think = 1000;
    std::vector<std::string> b_server_logs;
    bench->add_option("--target", b_target, "server host:port")->required();
    bench->add_option("--users", b_users, "concurrent users");
    bench->add_option("--duration", b_duration, "seconds");
    bench->add_option("--think-ms", b_think, "think time in milliseconds");
    bench->add_option("--base", b_base, "search base");
    bench->add_option("--scope", b_scope, "base|one|sub");
    bench->add_option("--filter", b_filter, "search filter");
    bench->add_option("--attrs", b_attrs, "'*' or comma-separated attributes");
    bench->add_option("--log", b_log, "client event log");
    bench->add_option("--out", b_out, "summary CSV path");
    bench->add_option("--scenario", b_scenario, "scenario label");
    bench->add_option("--sample-s", b_sample, "sampler interval in seconds");
    bench->add_option("--warmup", b_warmup, "seconds excluded from statistics");
    bench->add_option("--timeout", b_timeout, "client timeout in seconds");
    bench->add_option("--server-log", b_server_logs, "server logs to merge");
    bench->add_option("--identity", b_identity, "bind identity");
    bench->add_option("--secret", b_secret, "bind secret");

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "summarize merged logs");
    std::vector<std::string> a_logs;
    std::string a_out, a_phases;
    analyze_cmd->add_option("logs", a_logs, "log files")->required();
    analyze_cmd->add_option("--out", a_out, "summary CSV (default stdout)");
    analyze_cmd->add_option("--phases", a_phases, "per-phase CSV");

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "compare two summary CSVs");
    std::string c_a, c_b, c_out;
    compare_cmd->add_option("a", c_a, "summary CSV")->required();
    compare_cmd->add_option("b", c_b, "summary CSV")->required();
    compare_cmd->add_option("--out", c_out, "comparison CSV (default stdout)");

    // replicate
    auto* rep = app.add_subcommand("replicate", "run the scenario matrix");
    std::string r_scenarios = "gris-cached,gris-uncached,giis-cached", r_scale = "desk", r_out,
                r_users;
    double r_duration = 30, r_think = 1000;
    rep->add_option("--scenarios", r_scenarios, "comma-separated scenarios");
    rep->add_option("--scale", r_scale, "desk|paper");
    rep->add_option("--out", r_out, "run directory")->required();
    rep->add_option("--users", r_users, "comma-separated user counts");
    rep->add_option("--duration", r_duration, "seconds per run");
    rep->add_option("--think-ms", r_think, "think time in milliseconds");

    // emit-plotdata
    auto* plot = app.add_subcommand("emit-plotdata", "write gnuplot data and stubs");
    std::string p_in, p_out;
    plot->add_option("summary", p_in, "summary CSV")->required();
    plot->add_option("--out", p_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gris) {
            GrisConfig cfg = load_gris_config(gris_config);
            if (!gris_listen.empty()) {
                cfg.listen = net::Address::parse(gris_listen);
            }
            if (!gris_log.empty()) {
                cfg.log_path = gris_log;
            }
            if (!gris_ttl.empty()) {
                cfg.cache_ttl = CacheTtl::parse(gris_ttl);
            }
            if (!gris_register_to.empty()) {
                cfg.register_to = net::Address::parse(gris_register_to);
            }
            if (gris_register_ttl > 0) {
                cfg.register_ttl = std::chrono::seconds(gris_register_ttl);
            }
            auto server = run_gris(cfg);
            if (cfg.cache_ttl.is_infinite()) {
                server->service().warm();
            }
            std::cout << "gris listening on " << server->address().str() << std::endl;
            wait_for_signal();
            server->stop();
        } else if (*giis) {
            GiisConfig cfg = load_giis_config(giis_config);
            if (!giis_listen.empty()) {
                cfg.listen = net::Address::parse(giis_listen);
            }
            if (!giis_log.empty()) {
                cfg.log_path = giis_log;
            }
            if (!giis_ttl.empty()) {
                cfg.cache_ttl = CacheTtl::parse(giis_ttl);
            }
            if (giis_sweep > 0) {
                cfg.sweep_interval = std::chrono::milliseconds(static_cast<long>(giis_sweep * 1000));
            }
            auto server = run_giis(cfg);
            std::cout << "giis listening on " << server->address().str() << std::endl;
            wait_for_signal();
            server->stop();
        } else if (*bench) {
            BenchConfig cfg;
            cfg.scenario = b_scenario;
            cfg.target = net::Address::parse(b_target);
            if (!b_identity.empty()) {
                cfg.credential = {b_identity, b_secret};
            }
            cfg.users = b_users;
            cfg.duration = std::chrono::milliseconds(static_cast<long>(b_duration * 1000));
            cfg.think = std::chrono::milliseconds(b_think);
            cfg.base = EntryName::parse(b_base);
            cfg.scope = parse_scope(b_scope);
            cfg.filter = Filter::parse(b_filter);
            if (b_attrs != "*") {
                cfg.attributes = parse_word_list(b_attrs);
            }
            cfg.log_path = b_log;
            cfg.sample_interval = std::chrono::milliseconds(static_cast<long>(b_sample * 1000));
            cfg.warmup = std::chrono::milliseconds(static_cast<long>(b_warmup * 1000));
            cfg.timeout = std::chrono::milliseconds(static_cast<long>(b_timeout * 1000));
            RunOptions opts;
            for (const auto& p : b_server_logs) {
                opts.server_logs.emplace_back(p);
            }
            RunReport report = run_benchmark(cfg, opts);
            std::cerr << describe(report);
            if (report.lifelines.stats) {
                SummaryRow row = summary_row(report);
                write_text(b_out, format_summary_csv({row}));
                if (!b_out.empty()) {
                    write_text(sibling(b_out, "-phases.csv"),
                               format_phase_csv(phase_rows(report.window, report.lifelines)));
                }
            } else {
                std::cerr << "no complete lifelines (pass --server-log to merge server events)\n";
            }
        } else if (*analyze_cmd) {
            std::vector<std::filesystem::path> paths(a_logs.begin(), a_logs.end());
            Analysis a = analyze(paths);
            for (const auto& d : a.diagnostics) {
                std::cerr << "line " << d.line << ": " << d.reason << "\n";
            }
            write_text(a_out, format_summary_csv(a.rows));
            if (!a_phases.empty()) {
                write_text(a_phases, format_phase_csv(a.phases));
            }
        } else if (*compare_cmd) {
            auto ra = parse_summary_csv(read_text_file(c_a));
            auto rb = parse_summary_csv(read_text_file(c_b));
            write_text(c_out, format_comparison_csv(compare(ra, rb)));
        } else if (*rep) {
            ReplicateOptions o;
            o.scenarios = parse_word_list(r_scenarios);
            if (r_scale == "paper") {
                o.scale = Scale::Paper;
            } else if (r_scale != "desk") {
                throw Error(Errc::MalformedConfig, "scale must be desk or paper");
            }
            if (!r_users.empty()) {
                o.users = parse_int_list(r_users);
            }
            o.duration = std::chrono::milliseconds(static_cast<long>(r_duration * 1000));
            o.think = std::chrono::milliseconds(static_cast<long>(r_think));
            o.out_dir = r_out;
            ReplicateResult res = replicate(o);
            std::cout << format_findings(res.findings);
            for (const auto& f : res.findings) {
                if (!f.pass) {
                    return 1;
                }
            }
        } else if (*plot) {
            emit_plotdata(parse_summary_csv(read_text_file(p_in)), p_out);
        }
    } catch (const Error& e) {
        std::cerr << "mdslite: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
