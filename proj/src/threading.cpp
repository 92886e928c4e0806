#include "upr/threading.hpp"

#include <algorithm>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace upr {

namespace {

int g_num_threads = []() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}();

thread_local bool t_inside_worker = false;

// Minimal persistent pool. Each parallel_for publishes one job; worker i
// always takes chunk i+1 (the caller takes chunk 0), so the partition is
// fixed for a given (n, threads).
class Pool {
public:
    explicit Pool(int workers) : workers_(workers) {
        threads_.reserve(workers_);
        for (int i = 0; i < workers_; ++i) {
            threads_.emplace_back([this, i] { worker_loop(i); });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_work_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int workers() const { return workers_; }

    void publish(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>* fn) {
        {
            std::lock_guard<std::mutex> lk(m_);
            job_fn_ = fn;
            job_n_ = n;
            pending_ = workers_;
            ++generation_;
        }
        cv_work_.notify_all();
    }

    void wait_done() {
        std::unique_lock<std::mutex> lk(m_);
        cv_done_.wait(lk, [this] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

    static std::pair<std::int64_t, std::int64_t> chunk(std::int64_t n, int parts, int index) {
        std::int64_t per = (n + parts - 1) / parts;
        std::int64_t b = std::min<std::int64_t>(n, per * index);
        std::int64_t e = std::min<std::int64_t>(n, b + per);
        return {b, e};
    }

private:
    void worker_loop(int index) {
        t_inside_worker = true;
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
            std::int64_t n = 0;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_work_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                fn = job_fn_;
                n = job_n_;
            }
            auto [b, e] = chunk(n, workers_ + 1, index + 1);
            if (b < e) (*fn)(b, e);
            {
                std::lock_guard<std::mutex> lk(m_);
                if (--pending_ == 0) cv_done_.notify_all();
            }
        }
    }

    int workers_;
    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_work_, cv_done_;
    const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
    std::int64_t job_n_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

std::mutex g_pool_mutex;
std::unique_ptr<Pool> g_pool;

} // namespace

void set_num_threads(int n) {
    std::lock_guard<std::mutex> lk(g_pool_mutex);
    g_num_threads = std::max(1, n);
    g_pool.reset();
}

int num_threads() { return g_num_threads; }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    int threads = g_num_threads;
    if (threads == 1 || t_inside_worker || n < 2) {
        fn(0, n);
        return;
    }
    // One pool job at a time; concurrent callers serialize here.
    std::unique_lock<std::mutex> lk(g_pool_mutex);
    if (!g_pool || g_pool->workers() != threads - 1) {
        g_pool = std::make_unique<Pool>(threads - 1);
    }
    Pool* pool = g_pool.get();
    pool->publish(n, &fn);
    auto [b, e] = Pool::chunk(n, threads, 0);
    if (b < e) fn(b, e);
    pool->wait_done();
}

} // namespace upr
