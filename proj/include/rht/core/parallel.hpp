#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace rht {

namespace detail {
inline std::atomic<std::size_t>& worker_override()
{
    static std::atomic<std::size_t> value{0};
    return value;
}
} // namespace detail

/// Worker cap: set_worker_count() override, else RHT_THREADS, else hardware concurrency.
inline std::size_t worker_count()
{
    if (auto forced = detail::worker_override().load(); forced > 0)
        return forced;
    if (const char* env = std::getenv("RHT_THREADS")) {
        try {
            auto n = std::stoul(env);
            if (n > 0)
                return n;
        } catch (...) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// 0 restores the default.
inline void set_worker_count(std::size_t n) { detail::worker_override().store(n); }

/// Splits [0, n) into contiguous chunks and calls body(begin, end) for each, one chunk per worker.
/// Chunks never overlap, so bodies that only write to their own index range are race-free.
template <class Body>
void parallel_chunks(std::size_t n, Body&& body, std::size_t min_chunk = 1)
{
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
    if (workers <= 1 || n < 2) {
        body(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end)
            break;
        threads.emplace_back([&, w, begin, end] {
            try {
                body(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

template <class Body>
void parallel_for(std::size_t n, Body&& body)
{
    parallel_chunks(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            body(i);
    });
}

} // namespace rht
