#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

namespace flexfleet::flow {

/// Dinic max-flow on real-valued capacities. Residuals below an epsilon tied
/// to the largest capacity are treated as saturated.
class MaxFlow {
public:
    struct EdgeId {
        int node = -1;
        int index = -1;
    };

    int add_node() {
        graph_.emplace_back();
        return static_cast<int>(graph_.size()) - 1;
    }

    EdgeId add_edge(int from, int to, double cap) {
        max_cap_ = std::max(max_cap_, cap);
        graph_[static_cast<size_t>(from)].push_back(
            Edge{to, cap, static_cast<int>(graph_[static_cast<size_t>(to)].size())});
        graph_[static_cast<size_t>(to)].push_back(
            Edge{from, 0.0, static_cast<int>(graph_[static_cast<size_t>(from)].size()) - 1});
        return EdgeId{from, static_cast<int>(graph_[static_cast<size_t>(from)].size()) - 1};
    }

    /// Flow pushed through a forward edge.
    double flow_on(EdgeId id) const {
        const Edge& e = graph_[static_cast<size_t>(id.node)][static_cast<size_t>(id.index)];
        const Edge& rev = graph_[static_cast<size_t>(e.to)][static_cast<size_t>(e.rev)];
        return rev.cap;
    }

    double run(int source, int sink) {
        source_ = source;
        eps_ = 1e-12 * std::max(1.0, max_cap_);
        double total = 0.0;
        while (bfs(source, sink)) {
            iter_.assign(graph_.size(), 0);
            while (true) {
                const double pushed = dfs(source, sink, std::numeric_limits<double>::infinity());
                if (pushed <= eps_) break;
                total += pushed;
            }
        }
        return total;
    }

    /// Nodes reachable from the source in the residual graph (valid after
    /// run); the complement side of the minimum cut.
    std::vector<char> source_side() const {
        std::vector<char> seen(graph_.size(), 0);
        std::queue<int> q;
        q.push(source_);
        seen[static_cast<size_t>(source_)] = 1;
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            for (const Edge& e : graph_[static_cast<size_t>(v)]) {
                if (e.cap > eps_ && !seen[static_cast<size_t>(e.to)]) {
                    seen[static_cast<size_t>(e.to)] = 1;
                    q.push(e.to);
                }
            }
        }
        return seen;
    }

private:
    struct Edge {
        int to;
        double cap;
        int rev;
    };

    bool bfs(int source, int sink) {
        level_.assign(graph_.size(), -1);
        std::queue<int> q;
        level_[static_cast<size_t>(source)] = 0;
        q.push(source);
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            for (const Edge& e : graph_[static_cast<size_t>(v)]) {
                if (e.cap > eps_ && level_[static_cast<size_t>(e.to)] < 0) {
                    level_[static_cast<size_t>(e.to)] = level_[static_cast<size_t>(v)] + 1;
                    q.push(e.to);
                }
            }
        }
        return level_[static_cast<size_t>(sink)] >= 0;
    }

    double dfs(int v, int sink, double limit) {
        if (v == sink) return limit;
        for (int& i = iter_[static_cast<size_t>(v)];
             i < static_cast<int>(graph_[static_cast<size_t>(v)].size()); ++i) {
            Edge& e = graph_[static_cast<size_t>(v)][static_cast<size_t>(i)];
            if (e.cap <= eps_ || level_[static_cast<size_t>(e.to)] != level_[static_cast<size_t>(v)] + 1)
                continue;
            const double pushed = dfs(e.to, sink, std::min(limit, e.cap));
            if (pushed > eps_) {
                e.cap -= pushed;
                graph_[static_cast<size_t>(e.to)][static_cast<size_t>(e.rev)].cap += pushed;
                return pushed;
            }
        }
        return 0.0;
    }

    std::vector<std::vector<Edge>> graph_;
    std::vector<int> level_;
    std::vector<int> iter_;
    double max_cap_ = 0.0;
    double eps_ = 1e-12;
    int source_ = 0;
};

}  // namespace flexfleet::flow
