#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace bspde {

/// Fixed-size chunking used everywhere work is split across threads. Chunk
/// boundaries depend only on the problem size, never on the thread count, and
/// callers reduce per-chunk partials in chunk order, so results are bitwise
/// independent of `threads`.
inline constexpr std::size_t kChunk = 256;

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kChunk) { return (n + chunk - 1) / chunk; }

/// Calls fn(chunk_index, begin, end) for every chunk of [0, n). The first
/// exception (lowest chunk index) is rethrown after all workers join.
template <class Fn>
void for_chunks(std::size_t n, int threads, Fn&& fn, std::size_t chunk = kChunk) {
    const std::size_t chunks = chunk_count(n, chunk);
    if (chunks == 0) return;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), chunks);
    std::vector<std::exception_ptr> errors(chunks);
    auto run = [&](std::size_t w) {
        for (std::size_t c = w; c < chunks; c += workers) {
            try {
                fn(c, c * chunk, std::min(n, (c + 1) * chunk));
            } catch (...) {
                errors[c] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// splitmix64 finaliser; mixes (master, path, stream) into an independent seed.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t path, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(splitmix64(master) ^ path) ^ (stream * 0xd1b54a32d192ed03ULL));
}

}  // namespace bspde
