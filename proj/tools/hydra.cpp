// hydra: command-line entry point for every back-end stage.

#include "hydra/analytics.hpp"
#include "hydra/api.hpp"
#include "hydra/error.hpp"
#include "hydra/feeder.hpp"
#include "hydra/image.hpp"
#include "hydra/naming.hpp"
#include "hydra/pipeline.hpp"
#include "hydra/sim.hpp"
#include "hydra/store.hpp"
#include "hydra/training.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>
#include <thread>

namespace fs = std::filesystem;
using namespace hydra;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : fallback;
}

std::unique_ptr<Store> open_store(const std::string& db) {
    if (db.empty()) throw Error(ErrorCode::Validation, "no database: pass --db or set HYDRA_DB_PATH");
    return open_sqlite_store(db);
}

PlotType resolve_plot_type(const Store& store, const std::string& name) {
    auto pt = store.find_plot_type(name);
    if (!pt) throw Error(ErrorCode::UnknownPlotType, "unknown plot type '" + name + "'");
    return *pt;
}

LabelSpec parse_label_arg(const std::string& arg) {
    // name:severity[:color]
    const auto a = arg.find(':');
    if (a == std::string::npos) throw Error(ErrorCode::InvalidLabelSet, "label must be name:severity[:color]");
    const auto b = arg.find(':', a + 1);
    LabelSpec l;
    l.name = arg.substr(0, a);
    l.severity = parse_severity(arg.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1));
    l.color = b == std::string::npos ? Rgb{128, 128, 128} : parse_color(arg.substr(b + 1));
    return l;
}

std::vector<EvaluationItem> labeled_items(const Store& store, PlotTypeId pt) {
    std::vector<EvaluationItem> items;
    for (const auto& li : store.query_labeled(pt, std::nullopt, std::nullopt))
        items.push_back({li.image.id, li.assignment.label});
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.image < b.image; });
    return items;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hydra data-quality monitoring back end"};
    app.require_subcommand(1);
    std::string db = env_or("HYDRA_DB_PATH", "");
    std::string image_root = env_or("HYDRA_IMAGE_ROOT", "");
    std::string log_level = "info";
    app.add_option("--db", db, "SQLite database file (HYDRA_DB_PATH)");
    app.add_option("--image-root", image_root, "Image storage root (HYDRA_IMAGE_ROOT)");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

    auto* init = app.add_subcommand("init-db", "Create the database schema");

    auto* add_pt = app.add_subcommand("plot-type", "Register a plot type");
    std::string pt_name;
    int pt_w = 32, pt_h = 32, pt_c = 1;
    std::vector<std::string> pt_labels, pt_users;
    add_pt->add_option("--name", pt_name)->required();
    add_pt->add_option("--width", pt_w);
    add_pt->add_option("--height", pt_h);
    add_pt->add_option("--channels", pt_c);
    add_pt->add_option("--label", pt_labels, "name:severity[:color], repeatable")->required();
    add_pt->add_option("--labeler", pt_users, "Allowed labeler, repeatable");

    auto* grant = app.add_subcommand("grant", "Allow a user to label a plot type");
    std::string grant_pt, grant_user;
    grant->add_option("--plot-type", grant_pt)->required();
    grant->add_option("--user", grant_user)->required();

    auto* import_cmd = app.add_subcommand("import", "Store named images without inference, optionally labeled");
    std::string import_dir, import_label, import_user, truth_good, truth_bad;
    import_cmd->add_option("--dir", import_dir)->required();
    import_cmd->add_option("--label", import_label, "Label every imported image with this label name");
    import_cmd->add_option("--good-label", truth_good, "Label for Good rows of the directory's ground_truth.tsv");
    import_cmd->add_option("--bad-label", truth_bad, "Label for Bad rows of the directory's ground_truth.tsv");
    import_cmd->add_option("--user", import_user, "Labeler recorded on the assignments");

    auto* feeder_cmd = app.add_subcommand("feeder", "Watch an input directory and run the pipeline");
    std::string input_dir, reject_dir, heatmap_dir;
    int poll_ms = static_cast<int>(kDefaultPollInterval.count());
    int workers = 1;
    std::uint64_t seed = 0;
    feeder_cmd->add_option("--input-dir", input_dir)->required();
    feeder_cmd->add_option("--reject-dir", reject_dir)->required();
    feeder_cmd->add_option("--poll-ms", poll_ms);
    feeder_cmd->add_option("--workers", workers);
    feeder_cmd->add_option("--heatmap-dir", heatmap_dir);
    feeder_cmd->add_option("--seed", seed, "Collection sampling seed");

    auto* train_cmd = app.add_subcommand("train", "Train a reference model on the labeled images of a plot type");
    std::string train_pt, artifact;
    TrainingOptions topts;
    double collect = 0.0;
    bool activate_after = false;
    train_cmd->add_option("--plot-type", train_pt)->required();
    train_cmd->add_option("--out", artifact)->required();
    train_cmd->add_option("--epochs", topts.epochs);
    train_cmd->add_option("--learning-rate", topts.learning_rate);
    train_cmd->add_option("--seed", topts.seed);
    train_cmd->add_option("--collect-percentage", collect);
    train_cmd->add_flag("--activate", activate_after, "Select thresholds and activate the model");

    auto* activate_cmd = app.add_subcommand("activate", "Make a model the active one for its plot type");
    std::int64_t activate_id = 0;
    activate_cmd->add_option("--model", activate_id)->required();

    auto* analytics = app.add_subcommand("analytics", "Model and pipeline reports");
    analytics->require_subcommand(1);
    std::int64_t model_id = 0;
    std::int64_t window_ms = kDefaultLogWindowMs;
    std::int64_t window_to = 0;
    std::string status_pt;
    bool apply = false;
    auto* ecm_cmd = analytics->add_subcommand("ecm", "Enhanced confusion matrix over the labeled images");
    auto* thr_cmd = analytics->add_subcommand("thresholds", "Default thresholds by maximum effective F1");
    auto* diff_cmd = analytics->add_subcommand("diff", "Model vs human label disagreements");
    auto* status_cmd = analytics->add_subcommand("status", "Per-stage latency histograms");
    auto* log_cmd = analytics->add_subcommand("log", "Confirmed-Bad and unconfirmed inferences");
    for (auto* c : {ecm_cmd, thr_cmd, diff_cmd}) c->add_option("--model", model_id)->required();
    thr_cmd->add_flag("--apply", apply, "Store the selected thresholds");
    for (auto* c : {status_cmd, log_cmd}) {
        c->add_option("--window", window_ms, "Window length in ms");
        c->add_option("--to", window_to, "Window end (UTC ms), default now");
        c->add_option("--plot-type", status_pt);
    }
    log_cmd->add_option("--heatmap-dir", heatmap_dir);

    auto* serve = app.add_subcommand("serve", "Run the HTTP API (HYDRA_LISTEN)");
    std::string listen_addr = env_or("HYDRA_LISTEN", "127.0.0.1:8080");
    serve->add_option("--listen", listen_addr, "host:port");
    serve->add_option("--heatmap-dir", heatmap_dir);

    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic frame stream");
    StreamSpec sim;
    std::string schedule_file, out_dir;
    simulate->add_option("--plot-type", sim.plot_type)->required();
    simulate->add_option("--frames", sim.frames)->required();
    simulate->add_option("--schedule", schedule_file);
    simulate->add_option("--seed", sim.seed);
    simulate->add_option("--out", out_dir)->required();
    simulate->add_option("--width", sim.width);
    simulate->add_option("--height", sim.height);
    simulate->add_option("--run", sim.run_number);
    simulate->add_option("--ext", sim.extension);

    auto* experiment = app.add_subcommand("experiment", "Train, stream and score a desk-scale experiment");
    std::string config_file;
    int exp_workers = 0;
    experiment->add_option("--config", config_file)->required();
    experiment->add_option("--workers", exp_workers, "Override the configured worker count");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*init) {
            open_store(db);
            std::cout << "initialized " << db << '\n';
        } else if (*add_pt) {
            auto store = open_store(db);
            PlotTypeSpec spec;
            spec.name = pt_name;
            spec.input_width = pt_w;
            spec.input_height = pt_h;
            spec.channels = pt_c;
            for (const auto& l : pt_labels) spec.labels.push_back(parse_label_arg(l));
            spec.allowed_labelers.insert(pt_users.begin(), pt_users.end());
            const auto pt = store->register_plot_type(spec);
            std::cout << "plot_type id=" << pt.id.value << " name=" << pt.name << '\n';
            for (const auto& l : pt.labels)
                std::cout << "label id=" << l.id.value << " name=" << l.name << " severity=" << to_string(l.severity)
                          << '\n';
        } else if (*grant) {
            auto store = open_store(db);
            store->grant_labeler(resolve_plot_type(*store, grant_pt).id, grant_user);
        } else if (*import_cmd) {
            auto store = open_store(db);
            if (image_root.empty()) throw Error(ErrorCode::Validation, "pass --image-root or set HYDRA_IMAGE_ROOT");
            const bool by_truth = !truth_good.empty() || !truth_bad.empty();
            if (by_truth && !import_label.empty())
                throw Error(ErrorCode::Validation, "--label cannot be combined with --good-label/--bad-label");
            if ((by_truth || !import_label.empty()) && import_user.empty())
                throw Error(ErrorCode::Validation, "labeling needs --user");
            std::map<std::string, bool> truth;
            if (by_truth)
                for (const auto& f : read_ground_truth(fs::path(import_dir) / std::string(kGroundTruthFile)))
                    truth[f.filename] = f.bad;

            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(import_dir))
                if (entry.is_regular_file()) files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            std::size_t stored = 0, labeled = 0, skipped = 0;
            for (const auto& file : files) {
                const std::string name = file.filename().string();
                FileNameFields fields;
                try {
                    fields = parse_filename(name);
                } catch (const Error&) {
                    continue;
                }
                const PlotType pt = resolve_plot_type(*store, fields.plot_type_name);
                if (store->find_image(pt.id, fields.run_number, fields.sequence)) {
                    ++skipped;
                    continue;
                }
                const Image img = read_image(file);
                const std::string relative = (fs::path(pt.name) / name).generic_string();
                fs::create_directories(fs::path(image_root) / pt.name);
                fs::copy_file(file, fs::path(image_root) / relative, fs::copy_options::overwrite_existing);
                ImageRecord rec;
                rec.plot_type = pt.id;
                rec.run_number = fields.run_number;
                rec.sequence = fields.sequence;
                rec.capture_time = fields.capture_time_ms;
                rec.storage_path = relative;
                rec.width = img.width;
                rec.height = img.height;
                rec = store->add_image(rec);
                ++stored;

                std::string label_name = import_label;
                if (by_truth) {
                    const auto it = truth.find(name);
                    if (it != truth.end()) label_name = it->second ? truth_bad : truth_good;
                }
                if (label_name.empty()) continue;
                const LabelDef* label = pt.find_label(label_name);
                if (!label) throw Error(ErrorCode::UnknownLabel, "unknown label '" + label_name + "'");
                store->assign_label(rec.id, label->id, import_user, now_ms());
                ++labeled;
            }
            std::cout << "imported=" << stored << " labeled=" << labeled << " skipped=" << skipped << '\n';
        } else if (*feeder_cmd) {
            auto store = open_store(db);
            if (image_root.empty()) throw Error(ErrorCode::Validation, "pass --image-root or set HYDRA_IMAGE_ROOT");
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            AlarmBus alarms;
            PipelineOptions popts;
            popts.workers = workers;
            popts.worker.model_root = image_root;
            popts.worker.dead_letter_log = fs::path(image_root) / "dropped.jsonl";
            popts.keeper.heatmap_dir = heatmap_dir.empty() ? fs::path(image_root) / "heatmaps" : fs::path(heatmap_dir);
            popts.keeper.dead_letter_dir = fs::path(image_root) / "dead-letter";
            popts.keeper.seed = seed;
            Pipeline pipeline(*store, alarms, popts);
            pipeline.start();
            FeederOptions fopts;
            fopts.input_dir = input_dir;
            fopts.reject_dir = reject_dir;
            fopts.image_root = image_root;
            fopts.poll_interval = std::chrono::milliseconds(poll_ms);
            Feeder feeder(*store, fopts, pipeline.inbound());
            feeder.start();
            spdlog::info("feeder watching {} with {} worker(s)", input_dir, workers);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            feeder.stop();
            pipeline.stop();
        } else if (*train_cmd) {
            auto store = open_store(db);
            const PlotType pt = resolve_plot_type(*store, train_pt);
            const auto items = labeled_items(*store, pt.id);
            TrainingSet ts;
            ts.plot_type = pt.id;
            ts.sampling_method = "all-labeled";
            ts.created_at = now_ms();
            for (const auto& i : items) ts.members.push_back({i.image, i.truth});
            if (ts.members.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no labeled images");
            ts = store->add_training_set(ts);
            TrainingRequest req{ts.id, artifact, image_root, topts, collect};
            std::vector<double> losses;
            const auto model = train_reference(*store, req, &losses);
            std::cout << "model id=" << model.id.value << " artifact=" << model.artifact_path
                      << " final_loss=" << (losses.empty() ? 0.0 : losses.back()) << '\n';
            if (activate_after) {
                ScoringContext ctx;
                ctx.image_root = image_root;
                const auto choices = select_default_thresholds(*store, model.id, items, ctx);
                std::cout << format_thresholds(*store, model.id, choices);
                store->set_active_model(model.id);
            }
        } else if (*activate_cmd) {
            auto store = open_store(db);
            const auto prev = store->set_active_model(ModelId{activate_id});
            std::cout << "active model=" << activate_id << " previous=" << (prev ? std::to_string(prev->value) : "-")
                      << '\n';
        } else if (*analytics) {
            auto store = open_store(db);
            ScoringContext ctx;
            ctx.image_root = image_root;
            if (*ecm_cmd || *thr_cmd || *diff_cmd) {
                const ModelRecord model = store->model(ModelId{model_id});
                const auto items = labeled_items(*store, model.plot_type);
                const auto samples = score_images(*store, model.id, items, ctx);
                if (*ecm_cmd) std::cout << format_ecm(*store, model.id, build_ecm(model.label_order, samples));
                if (*diff_cmd) std::cout << format_diff(*store, model.id, training_diff(model.label_order, samples));
                if (*thr_cmd) {
                    const auto choices = select_default_thresholds(samples, model.label_order.size());
                    if (apply) {
                        std::vector<ThresholdConfig> rows;
                        for (std::size_t i = 0; i < choices.size(); ++i)
                            rows.push_back({model.id, model.label_order[i], choices[i].threshold});
                        store->set_thresholds(model.id, rows);
                    }
                    std::cout << format_thresholds(*store, model.id, choices);
                }
            } else {
                const UtcMillis to = window_to ? window_to : now_ms();
                const TimeWindow window{to - window_ms, to};
                std::optional<PlotTypeId> pt;
                if (!status_pt.empty()) pt = resolve_plot_type(*store, status_pt).id;
                if (*status_cmd) std::cout << format_status(status_metrics(*store, window, pt));
                if (heatmap_dir.empty() && !image_root.empty()) heatmap_dir = (fs::path(image_root) / "heatmaps").string();
                if (*log_cmd) std::cout << format_log(build_log_digest(*store, window, pt, heatmap_dir));
            }
        } else if (*serve) {
            ApiConfig defaults;
            const auto colon = listen_addr.rfind(':');
            if (colon == std::string::npos) throw Error(ErrorCode::Validation, "--listen must be host:port");
            defaults.host = listen_addr.substr(0, colon);
            defaults.port = std::stoi(listen_addr.substr(colon + 1));
            ApiConfig config = api_config_from_env(defaults);
            config.host = defaults.host;
            config.port = defaults.port;
            if (!db.empty()) config.db_path = db;
            if (!image_root.empty()) config.image_root = image_root;
            if (!heatmap_dir.empty()) config.heatmap_dir = heatmap_dir;
            if (config.heatmap_dir.empty()) config.heatmap_dir = config.image_root / "heatmaps";
            if (config.model_root.empty()) config.model_root = config.image_root;
            auto store = open_store(config.db_path.string());
            AlarmBus alarms;
            ApiService api(*store, alarms, config);
            spdlog::info("listening on {}:{}", config.host, config.port);
            if (!api.listen()) throw Error(ErrorCode::Io, "cannot listen on " + listen_addr);
        } else if (*simulate) {
            const FailureSchedule schedule = schedule_file.empty() ? FailureSchedule{} : load_schedule(schedule_file);
            const auto truth = generate_stream(sim, schedule, out_dir);
            std::size_t bad = 0;
            for (const auto& f : truth) bad += f.bad;
            std::cout << "frames=" << truth.size() << " bad=" << bad << " out=" << out_dir << '\n';
        } else if (*experiment) {
            auto config = load_experiment_config(config_file);
            if (exp_workers > 0) config.workers = exp_workers;
            std::cout << format_experiment_report(run_experiment(config));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
