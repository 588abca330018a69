#pragma once

#include "hydra/error.hpp"
#include "hydra/image.hpp"
#include "hydra/messages.hpp"
#include "hydra/store.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace hydra {

inline constexpr std::chrono::milliseconds kDefaultPollInterval{500};

/// Decodes an image file and brings it to the given shape (channel conversion,
/// then corner-aligned bilinear resize).
Image load_payload(const std::filesystem::path& file, int width, int height, int channels);

struct FeederOptions {
    std::filesystem::path input_dir;
    std::filesystem::path reject_dir;
    /// Accepted files are moved to <image_root>/<plot_type>/<filename>.
    std::filesystem::path image_root;
    /// Processed-set file, one filename per line. Defaults to
    /// <image_root>/.feeder-processed.
    std::filesystem::path state_file;
    std::chrono::milliseconds poll_interval = kDefaultPollInterval;
    std::function<UtcMillis()> clock = now_ms;
};

struct RejectedFile {
    std::string filename;
    ErrorCode reason;
    std::string message;
};

// Polling directory watcher. A file is taken once its size has been the same
// on two consecutive polls, so a single scan of a fresh directory emits nothing.
class Feeder {
public:
    /// `downstream` may be null, in which case orders are only returned.
    Feeder(Store& store, FeederOptions options, std::shared_ptr<Sink<InferenceOrder>> downstream = nullptr);
    ~Feeder();

    Feeder(const Feeder&) = delete;
    Feeder& operator=(const Feeder&) = delete;

    /// One poll of the input directory. Returns the orders emitted by this
    /// poll, in (capture_time, sequence) order.
    std::vector<InferenceOrder> scan_and_emit();

    /// Polls every poll_interval on a background thread until stop().
    void start();
    void stop();

    const std::vector<RejectedFile>& rejected() const noexcept { return rejected_; }
    bool processed(const std::string& filename) const { return processed_.count(filename) != 0; }

private:
    struct Candidate;

    void load_state();
    void remember(const std::string& filename);
    void reject(const std::filesystem::path& file, ErrorCode reason, const std::string& message);
    InferenceOrder ingest(const Candidate& candidate);

    Store& store_;
    FeederOptions options_;
    std::shared_ptr<Sink<InferenceOrder>> downstream_;

    std::set<std::string> processed_;
    std::map<std::string, std::uintmax_t> last_sizes_;
    std::vector<RejectedFile> rejected_;

    std::atomic<bool> running_{false};
    std::thread thread_;
};

} // namespace hydra
