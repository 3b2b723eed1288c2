#pragma once

#include <atomic>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "mender/session.hpp"

namespace mender {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace ws = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

/// WebSocket endpoint: one Session per connection, each on its own thread.
/// `make_session` must return an independent session; sessions share only
/// what the factory captures (frozen weights, the scenario).
template <class Backend>
class SessionServer {
 public:
  using Factory = std::function<Session<Backend>()>;

  SessionServer(Factory make_session, unsigned short port, const std::string& address = "127.0.0.1")
      : make_session_(std::move(make_session)), acceptor_(ioc_, {net::ip::make_address(address), port}) {}

  ~SessionServer() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  /// Accepts connections on a background thread until stop().
  void start() {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  /// Blocks the caller; used by the CLI.
  void run() { accept_loop(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    beast::error_code ec;
    if (accept_thread_.joinable()) {
      // a blocking accept() is not interrupted by close(); wake it with a connection
      net::io_context wake_ioc;
      tcp::socket wake(wake_ioc);
      wake.connect(acceptor_.local_endpoint(), ec);
      accept_thread_.join();
    }
    acceptor_.close(ec);
    std::vector<std::thread> workers;
    {
      std::lock_guard lock(mu_);
      workers.swap(workers_);
    }
    for (auto& t : workers)
      if (t.joinable()) t.join();
  }

  std::size_t sessions_served() const { return served_.load(); }

 private:
  void accept_loop() {
    while (!stopping_) {
      tcp::socket socket(ioc_);
      beast::error_code ec;
      acceptor_.accept(socket, ec);
      if (stopping_) return;
      if (ec) continue;
      std::lock_guard lock(mu_);
      workers_.emplace_back([this, s = std::move(socket)]() mutable { serve_one(std::move(s)); });
    }
  }

  void serve_one(tcp::socket socket) {
    try {
      ws::stream<tcp::socket> stream(std::move(socket));
      stream.accept();
      stream.text(true);
      Session<Backend> session = make_session_();
      auto send = [&](const Message& m) { stream.write(net::buffer(m.dump())); };
      send(session.hello());
      while (!session.finished()) {
        beast::flat_buffer buf;
        stream.read(buf);
        for (const auto& reply : session.handle_text(beast::buffers_to_string(buf.data()))) send(reply);
      }
      stream.close(ws::close_code::normal);
    } catch (const beast::system_error& e) {
      if (e.code() != ws::error::closed && e.code() != net::error::eof) std::cerr << "session: " << e.what() << '\n';
    } catch (const std::exception& e) {
      std::cerr << "session: " << e.what() << '\n';
    }
    ++served_;
  }

  Factory make_session_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::thread accept_thread_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> served_{0};
};

/// Minimal blocking client, used by scripted sessions and tests.
class SessionClient {
 public:
  SessionClient(const std::string& host, unsigned short port) : stream_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(stream_.next_layer(), resolver.resolve(host, std::to_string(port)));
    stream_.handshake(host + ":" + std::to_string(port), "/");
    stream_.text(true);
  }

  void send(const nlohmann::json& m) { stream_.write(net::buffer(m.dump())); }

  nlohmann::json receive() {
    beast::flat_buffer buf;
    stream_.read(buf);
    return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
  }

  void close() {
    beast::error_code ec;
    stream_.close(ws::close_code::normal, ec);
  }

 private:
  net::io_context ioc_;
  ws::stream<tcp::socket> stream_;
};

}  // namespace mender
