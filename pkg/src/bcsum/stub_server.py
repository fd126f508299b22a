"""Tiny HTTP refiner stand-in for tests and demos.

``POST /`` answers with the request body uppercased. ``POST /fail`` answers 500,
``POST /slow`` sleeps past any sane client timeout.

    python -m bcsum.stub_server --port 8808
"""
import argparse
import contextlib
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class _Handler(BaseHTTPRequestHandler):
    slow_seconds = 5.0

    def do_POST(self):
        body = self.rfile.read(int(self.headers.get("Content-Length", 0) or 0)).decode("utf-8")
        if self.path.startswith("/fail"):
            self.send_error(500, "stub failure")
            return
        if self.path.startswith("/slow"):
            time.sleep(self.slow_seconds)
        out = body.upper().encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, fmt, *args):
        pass


@contextlib.contextmanager
def running(port=0):
    """Serve on localhost in a background thread; yields the base URL."""
    server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--port", type=int, default=8808)
    args = ap.parse_args()
    server = ThreadingHTTPServer(("127.0.0.1", args.port), _Handler)
    print(f"stub refiner on http://127.0.0.1:{args.port}")
    server.serve_forever()


if __name__ == "__main__":
    main()
