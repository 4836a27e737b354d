#pragma once

#include <cerrno>
#include <cstring>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "conns/relabel.hpp"

namespace conns {

struct ProcessSpawnFailure : Error {
    explicit ProcessSpawnFailure(const std::string& detail) : Error("cannot spawn oracle: " + detail) {}
};

struct ProtocolViolation : Error {
    std::string line;
    explicit ProtocolViolation(std::string got)
        : Error("oracle protocol violation, got: '" + got + "'"), line(std::move(got)) {}
};

struct Timeout : Error {
    Timeout() : Error("oracle timed out") {}
};

// Adapter for an external contradiction judge. The child process receives one
// request per line on stdin (two TAB-separated fields, each a JSON-escaped
// rendering of "location=<v>;characteristics=<v>") and must answer one line,
// exactly CONTRADICTION or NOT_CONTRADICTION. One request is in flight at a
// time; verdicts are cached by request key.
class ExternalOracle : public ContradictionOracle {
public:
    explicit ExternalOracle(std::vector<std::string> argv, int timeout_ms = 5000)
        : argv_(std::move(argv)), timeout_ms_(timeout_ms) {
        if (argv_.empty()) throw ProcessSpawnFailure("empty command");
        spawn();
    }

    ~ExternalOracle() override { shutdown(); }

    ExternalOracle(const ExternalOracle&) = delete;
    ExternalOracle& operator=(const ExternalOracle&) = delete;

    Verdict judge(const Attrs& a, const Attrs& b) override {
        std::string request = nlohmann::json(render_attrs(a)).dump() + "\t" +
                              nlohmann::json(render_attrs(b)).dump();
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(request);
        if (it != cache_.end()) return it->second;

        std::string line = request + "\n";
        if (!write_all(line)) throw OracleFailure("oracle stdin closed");
        std::string reply = read_line();
        Verdict v;
        if (reply == "CONTRADICTION")
            v = Verdict::Contradiction;
        else if (reply == "NOT_CONTRADICTION")
            v = Verdict::NotContradiction;
        else
            throw ProtocolViolation(reply);
        cache_.emplace(std::move(request), v);
        return v;
    }

private:
    void spawn() {
        // a child that dies mid-conversation must surface as OracleFailure,
        // not kill us via SIGPIPE
        static std::once_flag sigpipe_once;
        std::call_once(sigpipe_once, [] { signal(SIGPIPE, SIG_IGN); });
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0)
            throw ProcessSpawnFailure(std::strerror(errno));
        pid_ = fork();
        if (pid_ < 0) throw ProcessSpawnFailure(std::strerror(errno));
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            std::vector<char*> args;
            for (auto& a : argv_) args.push_back(a.data());
            args.push_back(nullptr);
            execvp(args[0], args.data());
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        in_fd_ = to_child[1];
        out_fd_ = from_child[0];
    }

    void shutdown() {
        if (in_fd_ >= 0) close(in_fd_);
        if (out_fd_ >= 0) close(out_fd_);
        if (pid_ > 0) {
            kill(pid_, SIGTERM);
            int status = 0;
            waitpid(pid_, &status, 0);
        }
        in_fd_ = out_fd_ = -1;
        pid_ = -1;
    }

    bool write_all(const std::string& data) {
        std::size_t off = 0;
        while (off < data.size()) {
            ssize_t n = write(in_fd_, data.data() + off, data.size() - off);
            if (n <= 0) {
                if (errno == EINTR) continue;
                return false;
            }
            off += static_cast<std::size_t>(n);
        }
        return true;
    }

    std::string read_line() {
        std::string line;
        for (;;) {
            auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return line;
            }
            struct pollfd pfd{out_fd_, POLLIN, 0};
            int r = poll(&pfd, 1, timeout_ms_);
            if (r == 0) throw Timeout();
            if (r < 0) {
                if (errno == EINTR) continue;
                throw OracleFailure(std::strerror(errno));
            }
            char chunk[256];
            ssize_t n = read(out_fd_, chunk, sizeof(chunk));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw OracleFailure(std::strerror(errno));
            }
            if (n == 0) throw OracleFailure("oracle closed its stdout");
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    std::vector<std::string> argv_;
    int timeout_ms_;
    pid_t pid_ = -1;
    int in_fd_ = -1;
    int out_fd_ = -1;
    std::string buf_;
    std::map<std::string, Verdict> cache_;
    std::mutex mu_;
};

}  // namespace conns
