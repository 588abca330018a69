#include "hydra/feeder.hpp"

#include "hydra/naming.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <tuple>

namespace fs = std::filesystem;

namespace hydra {
namespace {

void move_file(const fs::path& from, const fs::path& to) {
    fs::create_directories(to.parent_path());
    std::error_code ec;
    fs::rename(from, to, ec);
    if (!ec) return;
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
    fs::remove(from);
}

} // namespace

Image load_payload(const fs::path& file, int width, int height, int channels) {
    Image img = read_image(file);
    if (img.channels != channels) img = convert_channels(img, channels);
    return resize_bilinear(img, width, height);
}

struct Feeder::Candidate {
    fs::path path;
    std::string filename;
    FileNameFields fields;
};

Feeder::Feeder(Store& store, FeederOptions options, std::shared_ptr<Sink<InferenceOrder>> downstream)
    : store_(store), options_(std::move(options)), downstream_(std::move(downstream)) {
    if (options_.state_file.empty()) options_.state_file = options_.image_root / ".feeder-processed";
    fs::create_directories(options_.image_root);
    if (!options_.reject_dir.empty()) fs::create_directories(options_.reject_dir);
    load_state();
}

Feeder::~Feeder() { stop(); }

void Feeder::load_state() {
    std::ifstream in(options_.state_file);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) processed_.insert(line);
}

void Feeder::remember(const std::string& filename) {
    processed_.insert(filename);
    std::ofstream out(options_.state_file, std::ios::app);
    out << filename << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "cannot append to " + options_.state_file.string());
}

void Feeder::reject(const fs::path& file, ErrorCode reason, const std::string& message) {
    const std::string name = file.filename().string();
    spdlog::warn("feeder: rejecting {}: {}", name, message);
    rejected_.push_back({name, reason, message});
    try {
        if (options_.reject_dir.empty()) {
            fs::remove(file);
            return;
        }
        move_file(file, options_.reject_dir / name);
        std::ofstream(options_.reject_dir / (name + ".reason")) << message << '\n';
    } catch (const std::exception& e) {
        spdlog::error("feeder: cannot quarantine {}: {}", name, e.what());
    }
}

InferenceOrder Feeder::ingest(const Candidate& c) {
    const auto start = std::chrono::steady_clock::now();
    const auto plot_type = store_.find_plot_type(c.fields.plot_type_name);
    if (!plot_type) throw Error(ErrorCode::UnknownPlotType, "unknown plot type '" + c.fields.plot_type_name + "'");
    if (store_.find_image(plot_type->id, c.fields.run_number, c.fields.sequence))
        throw Error(ErrorCode::DuplicateImage, "run " + std::to_string(c.fields.run_number) + " sequence " +
                                                   std::to_string(c.fields.sequence) + " already registered");
    const auto model = store_.active_model(plot_type->id);
    if (!model) throw Error(ErrorCode::NoActiveModel, "no active model for " + plot_type->name);

    Image raw = read_image(c.path);
    Image payload = raw.channels == model->channels ? raw : convert_channels(raw, model->channels);
    payload = resize_bilinear(payload, model->input_width, model->input_height);

    const std::string relative = (fs::path(plot_type->name) / c.filename).generic_string();
    ImageRecord record;
    record.plot_type = plot_type->id;
    record.run_number = c.fields.run_number;
    record.sequence = c.fields.sequence;
    record.capture_time = c.fields.capture_time_ms;
    record.storage_path = relative;
    record.width = raw.width;
    record.height = raw.height;
    record = store_.add_image(record);

    move_file(c.path, options_.image_root / relative);
    remember(c.filename);

    InferenceOrder order;
    order.order_id = OrderId{record.id.value};
    order.image = record.id;
    order.plot_type = plot_type->id;
    order.created_at = options_.clock();
    order.payload = std::move(payload);
    order.stage_timings.push_back(
        {std::string(kStageFeeder), std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    return order;
}

std::vector<InferenceOrder> Feeder::scan_and_emit() {
    std::map<std::string, std::uintmax_t> sizes;
    std::vector<Candidate> ready;
    for (const auto& entry : fs::directory_iterator(options_.input_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::error_code ec;
        const auto size = entry.file_size(ec);
        if (ec) continue;
        sizes[name] = size;
        const auto prev = last_sizes_.find(name);
        if (prev == last_sizes_.end() || prev->second != size) continue;

        if (processed_.count(name)) {
            reject(entry.path(), ErrorCode::DuplicateImage, "file already processed");
            sizes.erase(name);
            continue;
        }
        try {
            ready.push_back({entry.path(), name, parse_filename(name)});
        } catch (const Error& e) {
            reject(entry.path(), e.code(), e.what());
            sizes.erase(name);
        }
    }
    last_sizes_ = std::move(sizes);

    std::sort(ready.begin(), ready.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(a.fields.capture_time_ms, a.fields.sequence, a.filename) <
               std::tie(b.fields.capture_time_ms, b.fields.sequence, b.filename);
    });

    std::vector<InferenceOrder> emitted;
    for (const auto& c : ready) {
        last_sizes_.erase(c.filename);
        InferenceOrder order;
        try {
            order = ingest(c);
        } catch (const Error& e) {
            reject(c.path, e.code(), e.what());
            continue;
        } catch (const std::exception& e) {
            reject(c.path, ErrorCode::Io, e.what());
            continue;
        }
        if (downstream_ && !downstream_->send(order))
            spdlog::error("feeder: downstream closed, order {} not delivered", order.order_id.value);
        emitted.push_back(std::move(order));
    }
    return emitted;
}

void Feeder::start() {
    if (thread_.joinable()) return;
    running_ = true;
    thread_ = std::thread([this] {
        while (running_) {
            try {
                scan_and_emit();
            } catch (const std::exception& e) {
                spdlog::error("feeder: scan failed: {}", e.what());
            }
            const auto until = std::chrono::steady_clock::now() + options_.poll_interval;
            while (running_ && std::chrono::steady_clock::now() < until)
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    });
}

void Feeder::stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
}

} // namespace hydra
