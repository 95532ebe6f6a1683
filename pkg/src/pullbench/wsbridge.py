"""WebSocket <-> TCP byte bridge for the browser console.

Pipes bytes unchanged in both directions: every WebSocket binary message
is written to the TCP socket as-is, and TCP bytes are forwarded as binary
messages, so the console's frame decoder consumes the exact gateway byte
stream. Run:

    python -m pullbench.wsbridge --connect 127.0.0.1:7420 --listen 8765
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys

log = logging.getLogger(__name__)


async def _pipe_ws_to_tcp(ws, writer: asyncio.StreamWriter) -> None:
    async for message in ws:
        if isinstance(message, str):
            message = message.encode("utf-8")
        writer.write(message)
        await writer.drain()


async def _pipe_tcp_to_ws(reader: asyncio.StreamReader, ws) -> None:
    while True:
        data = await reader.read(65536)
        if not data:
            return
        await ws.send(data)


async def serve(listen_port: int, target_host: str, target_port: int,
                listen_host: str = "127.0.0.1") -> None:
    import websockets

    async def handler(ws):
        try:
            reader, writer = await asyncio.open_connection(target_host, target_port)
        except OSError as exc:
            log.warning("upstream connect failed: %s", exc)
            await ws.close(code=1011, reason="upstream unavailable")
            return
        log.info("bridged client %s -> %s:%d", ws.remote_address, target_host, target_port)
        tasks = [
            asyncio.create_task(_pipe_ws_to_tcp(ws, writer)),
            asyncio.create_task(_pipe_tcp_to_ws(reader, ws)),
        ]
        try:
            await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
        finally:
            for task in tasks:
                task.cancel()
            writer.close()
            try:
                await ws.close()
            except Exception:
                pass

    server = await websockets.serve(handler, listen_host, listen_port)
    log.info("ws bridge on ws://%s:%d -> tcp %s:%d",
             listen_host, listen_port, target_host, target_port)
    await server.wait_closed()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--connect", required=True, metavar="HOST:PORT",
                        help="gateway or daemon TCP address")
    parser.add_argument("--listen", type=int, default=8765, help="WebSocket port")
    parser.add_argument("--listen-host", default="127.0.0.1")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    host, _, port = args.connect.partition(":")
    try:
        asyncio.run(serve(args.listen, host, int(port), args.listen_host))
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
