#include "vforest/io.hpp"

#include <atomic>
#include <charconv>
#include <thread>

#include "vforest/parallel.hpp"

namespace vf {

namespace {
std::atomic<int> g_threads{0};  // 0 = use hardware concurrency
}

int worker_threads() {
    int n = g_threads.load();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    return n > 0 ? n : 1;
}

void set_worker_threads(int n) { g_threads.store(n); }

namespace io {

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file for checksum: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

}  // namespace io
}  // namespace vf
