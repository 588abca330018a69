#pragma once

#include "hydra/types.hpp"

#include <string>
#include <string_view>

namespace hydra {

// Image files dropped into the input directory are named
//   <plot_type>_r<run>_s<sequence>_t<capture_ms>.<ext>
// with ext one of png, ppm, pgm. Numbers are unsigned decimal without leading
// zeros, so every valid name has exactly one parse.
struct FileNameFields {
    std::string plot_type_name;
    std::int64_t run_number = 0;
    std::int64_t sequence = 0;
    UtcMillis capture_time_ms = 0;
    std::string extension = "png";

    friend bool operator==(const FileNameFields&, const FileNameFields&) = default;
};

/// Throws MalformedName.
FileNameFields parse_filename(std::string_view name);
std::string format_filename(const FileNameFields& fields);

} // namespace hydra
