#include "hydra/naming.hpp"

#include "hydra/error.hpp"

#include <charconv>
#include <limits>

namespace hydra {
namespace {

[[noreturn]] void malformed(std::string_view name, const char* why) {
    throw Error(ErrorCode::MalformedName, "'" + std::string(name) + "': " + why);
}

std::int64_t parse_field(std::string_view name, std::string_view field, char prefix) {
    if (field.size() < 2 || field[0] != prefix) malformed(name, "missing r/s/t field");
    const std::string_view digits = field.substr(1);
    if (digits.size() > 1 && digits[0] == '0') malformed(name, "leading zero in numeric field");
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits[0] == '-' || digits[0] == '+')
        malformed(name, "non-numeric field");
    return value;
}

} // namespace

FileNameFields parse_filename(std::string_view name) {
    const auto dot = name.rfind('.');
    if (dot == std::string_view::npos) malformed(name, "no extension");
    const std::string_view ext = name.substr(dot + 1);
    if (ext != "png" && ext != "ppm" && ext != "pgm") malformed(name, "unknown extension");
    if (name.find_first_of("/\\") != std::string_view::npos) malformed(name, "path separator in name");

    std::string_view stem = name.substr(0, dot);
    std::string_view parts[3];
    for (int i = 2; i >= 0; --i) {
        const auto us = stem.rfind('_');
        if (us == std::string_view::npos) malformed(name, "wrong field count");
        parts[i] = stem.substr(us + 1);
        stem = stem.substr(0, us);
    }
    if (stem.empty()) malformed(name, "empty plot type");

    FileNameFields f;
    f.plot_type_name = std::string(stem);
    f.run_number = parse_field(name, parts[0], 'r');
    f.sequence = parse_field(name, parts[1], 's');
    f.capture_time_ms = parse_field(name, parts[2], 't');
    f.extension = std::string(ext);
    return f;
}

std::string format_filename(const FileNameFields& f) {
    return f.plot_type_name + "_r" + std::to_string(f.run_number) + "_s" + std::to_string(f.sequence) + "_t" +
           std::to_string(f.capture_time_ms) + "." + f.extension;
}

} // namespace hydra
