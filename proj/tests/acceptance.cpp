// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "hydra/analytics.hpp"
#include "hydra/balancer.hpp"
#include "hydra/classifier.hpp"
#include "hydra/error.hpp"
#include "hydra/gradcam.hpp"
#include "hydra/keeper.hpp"
#include "hydra/naming.hpp"
#include "hydra/sim.hpp"
#include "hydra/store.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>
#include <tuple>
#include <unistd.h>

using namespace hydra;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

class CountingSink final : public Sink<InferenceOrder> {
public:
    bool send(InferenceOrder) override {
        ++count;
        return true;
    }
    std::atomic<std::size_t> count{0};
};

InferenceOrder small_order(std::int64_t id) {
    InferenceOrder o;
    o.order_id = OrderId{id};
    o.image = ImageId{id};
    o.payload = Image(4, 4, 1);
    return o;
}

Outcome round_robin_fairness() {
    const auto start = Clock::now();
    std::string detail;
    bool ok = true;
    for (std::size_t n : {1u, 2u, 3u, 4u, 8u}) {
        Balancer b;
        std::vector<std::shared_ptr<CountingSink>> sinks;
        for (std::size_t i = 0; i < n; ++i) {
            sinks.push_back(std::make_shared<CountingSink>());
            b.register_worker("w" + std::to_string(i), sinks.back());
        }
        for (int i = 0; i < 10000; ++i) b.dispatch(small_order(i));
        const double ideal = 10000.0 / static_cast<double>(n);
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& s : sinks) {
            lo = std::min<std::size_t>(lo, s->count);
            hi = std::max<std::size_t>(hi, s->count);
            if (std::abs(static_cast<double>(s->count) - ideal) > 1.0) ok = false;
        }
        detail += fmt::format("N={} [{},{}] ", n, lo, hi);
    }
    const double elapsed = seconds_since(start);
    detail += fmt::format("in {:.3f}s", elapsed);
    return {ok && elapsed < 5.0, detail};
}

Outcome dispatch_latency() {
    Balancer b;
    for (int i = 0; i < 4; ++i) b.register_worker("w" + std::to_string(i), std::make_shared<CountingSink>());
    std::vector<double> times;
    times.reserve(10000);
    for (int i = 0; i < 10000; ++i) {
        auto o = small_order(i);
        const auto t = Clock::now();
        b.dispatch(std::move(o));
        times.push_back(seconds_since(t));
    }
    std::nth_element(times.begin(), times.begin() + 5000, times.end());
    const double median = times[5000];
    return {median < 1e-3, fmt::format("median dispatch {:.3e}s over 10000 orders", median)};
}

Outcome fifo_per_worker() {
    constexpr int kOrders = 1000, kProducers = 4, kWorkers = 3;
    Balancer b(8);
    std::mutex log_mu;
    std::map<std::string, std::vector<std::int64_t>> dispatched;

    // Each worker is a small queue drained by a thread with random pauses.
    struct Worker {
        std::shared_ptr<BoundedQueue<InferenceOrder>> queue = std::make_shared<BoundedQueue<InferenceOrder>>(4);
        std::vector<std::int64_t> consumed;
        std::thread thread;
    };
    class LoggingSink final : public Sink<InferenceOrder> {
    public:
        LoggingSink(std::string name, std::shared_ptr<BoundedQueue<InferenceOrder>> q, std::mutex& mu,
                    std::map<std::string, std::vector<std::int64_t>>& log)
            : name_(std::move(name)), q_(std::move(q)), mu_(mu), log_(log) {}
        bool send(InferenceOrder o) override {
            {
                std::lock_guard lock(mu_);
                log_[name_].push_back(o.order_id.value);
            }
            return q_->push(std::move(o));
        }

    private:
        std::string name_;
        std::shared_ptr<BoundedQueue<InferenceOrder>> q_;
        std::mutex& mu_;
        std::map<std::string, std::vector<std::int64_t>>& log_;
    };

    std::vector<Worker> workers(kWorkers);
    for (int w = 0; w < kWorkers; ++w) {
        auto& wk = workers[static_cast<std::size_t>(w)];
        const std::string name = "w" + std::to_string(w);
        b.register_worker(name, std::make_shared<LoggingSink>(name, wk.queue, log_mu, dispatched));
        wk.thread = std::thread([&wk, w] {
            std::mt19937 rng(static_cast<unsigned>(w));
            while (auto o = wk.queue->pop()) {
                wk.consumed.push_back(o->order_id.value);
                if (rng() % 4 == 0) std::this_thread::sleep_for(std::chrono::microseconds(rng() % 200));
            }
        });
    }
    b.start();
    std::vector<std::thread> producers;
    for (int p = 0; p < kProducers; ++p)
        producers.emplace_back([&, p] {
            std::mt19937 rng(100u + static_cast<unsigned>(p));
            for (int i = p; i < kOrders; i += kProducers) {
                b.inbound()->push(small_order(i));
                if (rng() % 3 == 0) std::this_thread::sleep_for(std::chrono::microseconds(rng() % 100));
            }
        });
    for (auto& t : producers) t.join();
    b.stop();
    for (auto& w : workers) {
        w.queue->close();
        w.thread.join();
    }

    bool ok = true;
    std::size_t total = 0;
    for (int w = 0; w < kWorkers; ++w) {
        const auto& consumed = workers[static_cast<std::size_t>(w)].consumed;
        total += consumed.size();
        if (consumed != dispatched["w" + std::to_string(w)]) ok = false;
        // Orders from one producer keep their relative order at every worker.
        std::map<std::int64_t, std::int64_t> last;
        for (auto id : consumed) {
            auto& prev = last.try_emplace(id % kProducers, -1).first->second;
            if (id <= prev) ok = false;
            prev = id;
        }
    }
    return {ok && total == kOrders, fmt::format("{} orders over {} workers from {} producers", total, kWorkers, kProducers)};
}

Outcome softmax_properties() {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> logit(0.0, 5.0);
    std::uniform_real_distribution<double> shift(-500.0, 500.0);
    double worst_sum = 0.0, worst_shift = 0.0;
    bool ties_ok = true;
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> z(2 + rng() % 15);
        for (auto& v : z) v = logit(rng);
        if (i % 10 == 0) z[rng() % z.size()] = z[rng() % z.size()] = *std::max_element(z.begin(), z.end());
        const auto p = softmax(z);
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
        const double c = shift(rng);
        auto zs = z;
        for (auto& v : zs) v += c;
        const auto q = softmax(zs);
        for (std::size_t k = 0; k < p.size(); ++k) worst_shift = std::max(worst_shift, std::abs(p[k] - q[k]));
        const auto first_max = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
        if (argmax(p) != first_max || argmax(p) != argmax(softmax(z))) ties_ok = false;
    }
    return {worst_sum <= 1e-9 && worst_shift <= 1e-9 && ties_ok,
            fmt::format("max |sum-1| {:.1e}, max shift diff {:.1e}, lowest-index tie-break {}", worst_sum, worst_shift,
                        ties_ok ? "held" : "violated")};
}

Outcome gradient_check() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<float> pixel(0.0f, 1.0f);
    constexpr double kStep = 1e-4;
    double worst = 0.0;
    for (int instance = 0; instance < 100; ++instance) {
        const int channels = instance % 2 ? 3 : 1;
        const std::size_t labels = 2 + static_cast<std::size_t>(rng() % 3);
        std::vector<LabelId> order;
        for (std::size_t l = 0; l < labels; ++l) order.emplace_back(static_cast<std::int64_t>(l + 1));
        auto m = ReferenceClassifier::initialize(PlotTypeId{1}, order, channels, 1 + static_cast<int>(rng() % 3), rng());
        std::vector<Image> images;
        std::vector<std::size_t> targets;
        for (int n = 0; n < 2; ++n) {
            Image img(4 + static_cast<int>(rng() % 3), 4 + static_cast<int>(rng() % 3), channels);
            for (auto& v : img.data) v = pixel(rng);
            images.push_back(img);
            targets.push_back(rng() % labels);
        }
        std::vector<double> analytic;
        m.loss(images, targets, &analytic);
        auto params = m.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + kStep;
            m.set_parameters(params);
            const double up = m.loss(images, targets);
            params[i] = keep - kStep;
            m.set_parameters(params);
            const double down = m.loss(images, targets);
            params[i] = keep;
            m.set_parameters(params);
            const double numeric = (up - down) / (2 * kStep);
            const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
            if (scale < 1e-10) continue;
            worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
        }
    }
    return {worst <= 1e-3, fmt::format("worst per-parameter relative error {:.2e} over 100 instances", worst)};
}

Outcome gradcam_properties() {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> act(0.0, 3.0), alpha(-1.0, 1.0);
    bool zero_ok = true, range_ok = true, max_ok = true;
    double worst_prop = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const int w = 2 + static_cast<int>(rng() % 8), h = 2 + static_cast<int>(rng() % 8), k = 1 + static_cast<int>(rng() % 4);
        const int iw = w + static_cast<int>(rng() % 10), ih = h + static_cast<int>(rng() % 10);
        std::vector<FeatureMap> a, g, zero;
        for (int i = 0; i < k; ++i) {
            FeatureMap m{w, h, std::vector<double>(static_cast<std::size_t>(w) * h)};
            for (auto& v : m.values) v = act(rng);
            a.push_back(m);
            g.push_back({w, h, std::vector<double>(m.values.size(), alpha(rng))});
            zero.push_back({w, h, std::vector<double>(m.values.size(), 0.0)});
        }
        for (double v : gradcam(a, zero, iw, ih).values) zero_ok = zero_ok && v == 0.0;

        const auto map = gradcam(a, g, iw, ih);
        double peak = 0.0;
        for (double v : map.values) {
            range_ok = range_ok && v >= 0.0 && v <= 1.0;
            peak = std::max(peak, v);
        }
        if (peak != 0.0 && peak != 1.0) max_ok = false;

        // K = 1 at feature resolution: the map is A / max(A).
        std::vector<FeatureMap> one{a[0]};
        std::vector<FeatureMap> pos{{w, h, std::vector<double>(a[0].values.size(), std::abs(alpha(rng)) + 1e-3)}};
        const auto prop = gradcam(one, pos, w, h);
        const double amax = *std::max_element(a[0].values.begin(), a[0].values.end());
        for (std::size_t i = 0; i < a[0].values.size(); ++i)
            worst_prop = std::max(worst_prop, std::abs(prop.values[i] - a[0].values[i] / amax));
    }
    return {zero_ok && range_ok && max_ok && worst_prop <= 1e-9,
            fmt::format("zero map {}, range {}, max=1 {}, K=1 proportionality error {:.1e}", zero_ok ? "ok" : "bad",
                        range_ok ? "ok" : "bad", max_ok ? "ok" : "bad", worst_prop)};
}

// Independent sweep: every distinct weight the label takes (and 0), in
// ascending order; the first threshold reaching the best F1 wins.
std::pair<double, double> sweep_thresholds(const std::vector<ScoredSample>& samples, std::size_t label) {
    std::set<double> grid{0.0};
    for (const auto& s : samples) grid.insert(s.weights[label]);
    double best_t = 0.0, best_f = -1.0;
    for (double t : grid) {
        long tp = 0, fp = 0, fn = 0;
        for (const auto& s : samples) {
            std::size_t top = 0;
            for (std::size_t k = 1; k < s.weights.size(); ++k)
                if (s.weights[k] > s.weights[top]) top = k;
            const bool pred = top == label && s.weights[label] > t;
            tp += pred && s.truth == label;
            fp += pred && s.truth != label;
            fn += !pred && s.truth == label;
        }
        const double f = (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        if (f > best_f) {
            best_f = f;
            best_t = t;
        }
    }
    return {best_t, best_f};
}

Outcome threshold_selection() {
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0;
    for (int fixture = 0; fixture < 50; ++fixture) {
        const std::size_t labels = 2 + rng() % 4;
        const std::size_t n = 1 + rng() % 200;
        std::vector<ScoredSample> samples;
        for (std::size_t i = 0; i < n; ++i) {
            ScoredSample s{ImageId{static_cast<std::int64_t>(i)}, std::vector<double>(labels), rng() % labels};
            double sum = 0.0;
            // Coarse weights make repeated values, and so threshold ties, common.
            for (auto& w : s.weights) sum += (w = std::round(u(rng) * 20.0) + 1.0);
            for (auto& w : s.weights) w /= sum;
            samples.push_back(std::move(s));
        }
        const auto got = select_default_thresholds(samples, labels);
        for (std::size_t l = 0; l < labels; ++l) {
            const auto [t, f] = sweep_thresholds(samples, l);
            if (got[l].threshold != t || got[l].f1 != f) ++mismatches;
        }
    }
    // Boundary: a weight equal to the threshold is not above it.
    const std::vector<ScoredSample> edge = {{ImageId{1}, {0.9, 0.1}, 0}, {ImageId{2}, {0.6, 0.4}, 1}};
    const auto e = select_default_thresholds(edge, 2);
    const bool boundary = e[0].threshold == 0.6 && e[0].f1 == 1.0 && effective_f1(edge, 0, 0.6) == 1.0 &&
                          effective_f1(edge, 0, 0.0) == 2.0 / 3.0;
    return {mismatches == 0 && boundary,
            fmt::format("{} label mismatches over 50 fixtures; strict-above boundary {}", mismatches,
                        boundary ? "ok" : "violated")};
}

Outcome keeper_policy() {
    auto store = make_memory_store();
    PlotTypeSpec spec;
    spec.name = "occupancy";
    spec.input_width = spec.input_height = 8;
    spec.channels = 1;
    spec.labels = {{"Good", parse_color("green"), Severity::Good},
                   {"DeadRegion", parse_color("red"), Severity::Bad},
                   {"Other", parse_color("gray"), Severity::Other}};
    const auto pt = store->register_plot_type(spec);
    ModelRecord m;
    m.plot_type = pt.id;
    m.artifact_path = "unused.hydm";
    for (const auto& l : pt.labels) m.label_order.push_back(l.id);
    m.input_width = m.input_height = 8;
    m.collect_percentage = 0.1;
    m = store->add_model(m);
    store->set_thresholds(m.id, {{m.id, pt.labels[0].id, 0.5}, {m.id, pt.labels[1].id, 0.5}, {m.id, pt.labels[2].id, 0.5}});
    AlarmBus alarms(16);
    KeeperOptions opts;
    opts.seed = 12345;
    Keeper keeper(*store, alarms, opts);

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t forced = 0, forced_collected = 0, random_samples = 0, good_confirmed = 0;
    const auto submit = [&](std::int64_t seq, std::size_t cls, double weight) {
        ImageRecord rec;
        rec.plot_type = pt.id;
        rec.run_number = 1;
        rec.sequence = seq;
        rec.storage_path = "x";
        rec.width = rec.height = 8;
        const auto img = store->add_image(rec);
        Report r;
        r.order_id = OrderId{img.id.value};
        r.image = img.id;
        r.model = m.id;
        r.plot_type = pt.id;
        r.output_weights.assign(3, (1.0 - weight) / 2);
        r.output_weights[cls] = weight;
        r.classification = m.label_order[cls];
        return keeper.handle_report(r);
    };
    // Population 1: mixed severities and confidences.
    for (std::int64_t i = 0; i < 10000; ++i) {
        const std::size_t cls = rng() % 3;
        const double weight = 0.34 + 0.66 * u(rng);
        const auto e = submit(i, cls, weight);
        if (!e) return {false, "report not recorded"};
        const bool must = cls == 1 || !e->confirmed;
        forced += must;
        forced_collected += must && e->collected &&
                            e->collect_reason == (cls == 1 ? CollectReason::BadClass : CollectReason::Unconfirmed);
    }
    // Population 2: confirmed Good only; collection is the random draw alone.
    for (std::int64_t i = 0; i < 10000; ++i) {
        const auto e = submit(100000 + i, 0, 0.9);
        if (!e) return {false, "report not recorded"};
        good_confirmed += e->confirmed;
        random_samples += e->collect_reason == CollectReason::RandomSample;
    }
    const double sigma = std::sqrt(10000 * 0.1 * 0.9);
    const bool ok = forced == forced_collected && good_confirmed == 10000 && random_samples >= 900 && random_samples <= 1100;
    return {ok, fmt::format("{}/{} Bad-or-unconfirmed collected; RandomSample {} of 10000 (expected 1000, 3 sigma = {:.0f})",
                            forced_collected, forced, random_samples, 3 * sigma)};
}

Outcome ecm_tally() {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bool ok = true;
    std::size_t total = 0;
    for (int fixture = 0; fixture < 20; ++fixture) {
        const std::size_t n = 2 + rng() % 5;
        std::vector<LabelId> labels;
        for (std::size_t l = 0; l < n; ++l) labels.emplace_back(static_cast<std::int64_t>(100 + l));
        std::vector<ScoredSample> samples;
        for (int i = 0; i < 300; ++i) {
            ScoredSample s{ImageId{i}, std::vector<double>(n), rng() % n};
            double sum = 0;
            for (auto& w : s.weights) sum += (w = u(rng));
            for (auto& w : s.weights) w /= sum;
            samples.push_back(std::move(s));
        }
        std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> tally;
        for (const auto& s : samples) {
            std::size_t top = 0;
            for (std::size_t k = 1; k < n; ++k)
                if (s.weights[k] > s.weights[top]) top = k;
            tally[{s.truth, top}].push_back(s.weights[top]);
        }
        const auto ecm = build_ecm(labels, samples);
        total += ecm.total();
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t p = 0; p < n; ++p) {
                const auto& want = tally[{t, p}];
                const auto& cell = ecm.cells[t][p];
                if (cell.count != want.size() || cell.weight_samples.size() != want.size()) {
                    ok = false;
                    continue;
                }
                for (std::size_t i = 0; i < want.size(); ++i)
                    if (std::abs(cell.weight_samples[i] - want[i]) > 1e-12) ok = false;
            }
    }
    return {ok && total == 20 * 300, fmt::format("20 fixtures, {} samples tallied", total)};
}

ExperimentConfig experiment_config(int workers, const fs::path& dir) {
    ExperimentConfig c;
    c.plot_type = "occupancy";
    c.width = c.height = 32;
    c.seed = 7;
    c.workers = workers;
    c.train_good = c.train_bad = 100;
    c.train_failure = FailureKind::DeadRegion;
    c.train_region = {8, 8, 16, 16};
    c.frames = 300;
    c.schedule = parse_schedule("DeadRegion 150 299 8 8 16 16\n");
    c.work_dir = dir;
    return c;
}

Outcome end_to_end(const ExperimentReport& r) {
    const bool detected = r.first_confirmed_bad && *r.first_confirmed_bad >= 150 && *r.first_confirmed_bad <= 155;
    const bool ok = r.training_accuracy == 1.0 && r.frames.size() == 300 && detected &&
                    r.confirmed_bad_before_onset == 0 && r.elapsed_seconds < 60.0;
    return {ok, fmt::format("training accuracy {:.3f}, first confirmed Bad at {}, {} before onset, {} frames, {:.1f}s",
                            r.training_accuracy, r.first_confirmed_bad ? std::to_string(*r.first_confirmed_bad) : "none",
                            r.confirmed_bad_before_onset, r.frames.size(), r.elapsed_seconds)};
}

Outcome worker_count_invariance(const ExperimentReport& one, const ExperimentReport& four) {
    using Row = std::tuple<std::int64_t, std::string, bool, CollectReason>;
    const auto rows = [](const ExperimentReport& r) {
        std::set<Row> out;
        for (const auto& f : r.frames) out.emplace(f.image.value, f.classification, f.confirmed, f.collect_reason);
        return out;
    };
    const auto a = rows(one), b = rows(four);
    return {a == b && a.size() == 300, fmt::format("{} rows with N=1, {} with N=4, {}", a.size(), b.size(),
                                                   a == b ? "identical" : "different")};
}

Outcome naming_round_trip() {
    std::mt19937_64 rng(314);
    const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-";
    const char* exts[] = {"png", "ppm", "pgm"};
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
        FileNameFields f;
        const int len = 1 + static_cast<int>(rng() % 24);
        for (int k = 0; k < len; ++k) f.plot_type_name += alphabet[rng() % alphabet.size()];
        f.run_number = static_cast<std::int64_t>(rng() >> 1);
        f.sequence = static_cast<std::int64_t>(rng() % 1000000000);
        f.capture_time_ms = static_cast<std::int64_t>(rng() >> 1);
        f.extension = exts[rng() % 3];
        try {
            const auto name = format_filename(f);
            if (!(parse_filename(name) == f) || format_filename(parse_filename(name)) != name) ++bad;
        } catch (const Error&) {
            ++bad;
        }
    }
    return {bad == 0, fmt::format("{} of 10000 names failed to round-trip", bad)};
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    report("round-robin-fairness", round_robin_fairness);
    report("dispatch-latency", dispatch_latency);
    report("fifo-per-worker", fifo_per_worker);
    report("softmax", softmax_properties);
    report("gradient-check", gradient_check);
    report("gradcam", gradcam_properties);
    report("threshold-selection", threshold_selection);
    report("keeper-policy", keeper_policy);
    report("ecm-tally", ecm_tally);

    const fs::path base = fs::temp_directory_path() / ("hydra-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(base);
    std::optional<ExperimentReport> one, four;
    std::string run_error;
    try {
        four = run_experiment(experiment_config(4, base / "n4"));
        one = run_experiment(experiment_config(1, base / "n1"));
    } catch (const std::exception& e) {
        run_error = e.what();
    }
    report("end-to-end", [&]() -> Outcome {
        if (!four) return {false, "experiment failed: " + run_error};
        return end_to_end(*four);
    });
    report("worker-count-invariance", [&]() -> Outcome {
        if (!one || !four) return {false, "experiment failed: " + run_error};
        return worker_count_invariance(*one, *four);
    });
    report("naming-round-trip", naming_round_trip);
    fs::remove_all(base);

    std::cout << (failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failures)) << std::endl;
    return failures == 0 ? 0 : 1;
}
