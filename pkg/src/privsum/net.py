"""Networked deployment: one TCP process per node.

Frames are length-prefixed and big-endian throughout.  Each node connects
to its out-neighbors and accepts connections from its in-neighbors, so
traffic follows the directed topology exactly.  Public keys reach everyone
by flooding along graph edges before round 0.  After startup alignment the
only synchronization is implicit: a node applies round k once it holds all
round-k shares from its in-neighbors, and never sends round k+1 before
that.

Share payloads are either two raw float64s (plain mode) or two
length-prefixed Paillier ciphertexts encrypted under the receiver's public
key (encrypted mode).  With identical seeds the plain-mode trajectory is
bit-for-bit the simulator's, because both derive the same per-node weight
streams.
"""
from __future__ import annotations

import csv
import json
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .consensus import apply_round, initial_state, outgoing_shares, ShareMessage
from .errors import (
    ConfigError,
    DecryptFailure,
    MalformedCiphertext,
    PeerDisconnected,
    ProtocolError,
    Timeout,
)
from .paillier import (
    Ciphertext,
    FixedPointCodec,
    PaillierKeypair,
    decrypt,
    encrypt,
    keygen,
    public_key_from_bytes,
    public_key_to_bytes,
)
from .sim import ExperimentConfig, resolve_x0
from .weights import derive_seed, generate_round_weights, node_rng

MAGIC = b"PSUM"
VERSION = 1

MSG_KEY_ANNOUNCE = 1
MSG_SHARE_PLAIN = 2
MSG_SHARE_ENC = 3
MSG_ROUND_SYNC = 4

_HEADER = struct.Struct(">4sBBIII")

MODE_PLAIN = "plain"
MODE_ENCRYPTED = "encrypted"


@dataclass(frozen=True)
class WireFrame:
    msg_type: int
    sender_id: int
    round: int
    payload: bytes


def encode_frame(frame: WireFrame) -> bytes:
    return (
        _HEADER.pack(
            MAGIC,
            VERSION,
            frame.msg_type,
            frame.sender_id,
            frame.round,
            len(frame.payload),
        )
        + frame.payload
    )


def decode_frame(data: bytes) -> WireFrame:
    """Parse one complete frame from a byte string."""
    if len(data) < _HEADER.size:
        raise ProtocolError("frame shorter than its fixed header")
    magic, version, msg_type, sender, round_k, length = _HEADER.unpack(
        data[: _HEADER.size]
    )
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    payload = data[_HEADER.size :]
    if len(payload) != length:
        raise ProtocolError(f"payload length {len(payload)} != declared {length}")
    return WireFrame(msg_type=msg_type, sender_id=sender, round=round_k, payload=payload)


def read_frame(sock: socket.socket) -> WireFrame | None:
    """Read one frame from a stream socket; None on clean EOF."""
    header = _read_exact(sock, _HEADER.size)
    if header is None:
        return None
    magic, version, msg_type, sender, round_k, length = _HEADER.unpack(header)
    if magic != MAGIC or version != VERSION:
        raise ProtocolError("bad frame header on stream")
    payload = b""
    if length:
        payload = _read_exact(sock, length)
        if payload is None:
            raise ProtocolError("stream ended inside a frame payload")
    return WireFrame(msg_type=msg_type, sender_id=sender, round=round_k, payload=payload)


def _read_exact(sock: socket.socket, count: int) -> bytes | None:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("stream ended in the middle of a frame")
            return None
        buf += chunk
    return buf


def pack_plain_shares(s_share: float, w_share: float) -> bytes:
    return struct.pack(">dd", s_share, w_share)


def unpack_plain_shares(payload: bytes) -> tuple[float, float]:
    if len(payload) != 16:
        raise ProtocolError("plain share payload must be 16 bytes")
    return struct.unpack(">dd", payload)


def _pack_bigint(v: int) -> bytes:
    raw = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
    return len(raw).to_bytes(4, "big") + raw


def _unpack_bigint(payload: bytes, offset: int) -> tuple[int, int]:
    if len(payload) < offset + 4:
        raise ProtocolError("truncated big integer")
    length = int.from_bytes(payload[offset : offset + 4], "big")
    end = offset + 4 + length
    if len(payload) < end:
        raise ProtocolError("truncated big integer")
    return int.from_bytes(payload[offset + 4 : end], "big"), end


def pack_cipher_shares(s_cipher: int, w_cipher: int) -> bytes:
    return _pack_bigint(s_cipher) + _pack_bigint(w_cipher)


def unpack_cipher_shares(payload: bytes) -> tuple[int, int]:
    s_val, offset = _unpack_bigint(payload, 0)
    w_val, offset = _unpack_bigint(payload, offset)
    if offset != len(payload):
        raise ProtocolError("trailing bytes after cipher shares")
    return s_val, w_val


def pack_key_announce(origin: int, public_key) -> bytes:
    return origin.to_bytes(4, "big") + public_key_to_bytes(public_key)


def unpack_key_announce(payload: bytes):
    if len(payload) < 4:
        raise ProtocolError("truncated key announcement")
    origin = int.from_bytes(payload[:4], "big")
    key, rest = public_key_from_bytes(payload[4:])
    if rest:
        raise ProtocolError("trailing bytes after key announcement")
    return origin, key


class NodeRuntime:
    """One protocol node bound to a listening TCP socket.

    Drives the exact same state machine as the simulator: the weight stream
    is derived from (seed, node id), shares are computed and applied with
    identical float operations, and rounds advance only when every
    in-neighbor's share for the current round has arrived.
    """

    def __init__(
        self,
        node_id: int,
        listen: tuple[str, int],
        peers: dict[int, tuple[str, int]],
        config: ExperimentConfig,
        mode: str = MODE_PLAIN,
        out_dir: str | Path | None = None,
        connect_deadline: float = 20.0,
        round_timeout: float = 60.0,
        capture_frames: bool = False,
    ) -> None:
        if mode not in (MODE_PLAIN, MODE_ENCRYPTED):
            raise ConfigError(f"mode must be '{MODE_PLAIN}' or '{MODE_ENCRYPTED}'")
        config.validate()
        self.node_id = node_id
        self.listen = listen
        self.peers = peers
        self.config = config
        self.mode = mode
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.connect_deadline = connect_deadline
        self.round_timeout = round_timeout
        self.capture_frames = capture_frames

        self.graph = config.graph
        self.out_ids = list(self.graph.out_neighbors(node_id))
        self.in_ids = list(self.graph.in_neighbors(node_id))

        self._lock = threading.Condition()
        self._shares: dict[tuple[int, int], tuple[float, float] | tuple[int, int]] = {}
        self._syncs: set[tuple[int, int]] = set()
        self._key_directory: dict[int, object] = {}
        # Reader threads never write to sockets; fresh keys are queued here
        # and re-flooded by the protocol driver, keeping all sends on one
        # thread per socket.
        self._reflood_queue: list[bytes] = []
        self._dead: str | None = None
        self._out_socks: dict[int, socket.socket] = {}
        self._reader_threads: list[threading.Thread] = []
        self._sent_frames: list[bytes] = []

        self.keypair: PaillierKeypair | None = None
        if mode == MODE_ENCRYPTED:
            rng = random.Random(derive_seed("keygen", config.seed, node_id))
            self.keypair = keygen(config.key_bits, rng)
            self._key_directory[node_id] = self.keypair.public
        self._enc_rng = random.Random(derive_seed("encrypt", config.seed, node_id))
        self.encrypt_seconds: list[float] = []

    # -- wiring -----------------------------------------------------------

    def _serve(self) -> None:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self.listen)
        self._listener.listen(len(self.in_ids) + 4)

        def accept_loop() -> None:
            expected = len(self.in_ids)
            accepted = 0
            while accepted < expected:
                try:
                    conn, _ = self._listener.accept()
                except OSError:
                    return
                accepted += 1
                t = threading.Thread(target=self._reader, args=(conn,), daemon=True)
                t.start()
                self._reader_threads.append(t)

        threading.Thread(target=accept_loop, daemon=True).start()

    def _connect_out(self) -> None:
        deadline = time.monotonic() + self.connect_deadline
        for peer in self.out_ids:
            host, port = self.peers[peer]
            while True:
                try:
                    sock = socket.create_connection((host, port), timeout=2.0)
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    self._out_socks[peer] = sock
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise PeerDisconnected(
                            f"node {self.node_id} could not reach peer {peer} "
                            f"at {host}:{port} within {self.connect_deadline}s"
                        )
                    time.sleep(0.05)

    def _reader(self, conn: socket.socket) -> None:
        try:
            while True:
                frame = read_frame(conn)
                if frame is None:
                    return
                self._dispatch(frame)
        except Exception as exc:  # noqa: BLE001 - reported to the driver
            with self._lock:
                self._dead = f"receive loop failed: {exc}"
                self._lock.notify_all()

    def _dispatch(self, frame: WireFrame) -> None:
        if frame.msg_type == MSG_KEY_ANNOUNCE:
            origin, key = unpack_key_announce(frame.payload)
            with self._lock:
                if origin not in self._key_directory:
                    self._key_directory[origin] = key
                    self._reflood_queue.append(frame.payload)
                    self._lock.notify_all()
        elif frame.msg_type == MSG_SHARE_PLAIN:
            shares = unpack_plain_shares(frame.payload)
            with self._lock:
                self._shares[(frame.round, frame.sender_id)] = shares
                self._lock.notify_all()
        elif frame.msg_type == MSG_SHARE_ENC:
            ciphers = unpack_cipher_shares(frame.payload)
            with self._lock:
                self._shares[(frame.round, frame.sender_id)] = ciphers
                self._lock.notify_all()
        elif frame.msg_type == MSG_ROUND_SYNC:
            with self._lock:
                self._syncs.add((frame.round, frame.sender_id))
                self._lock.notify_all()
        else:
            raise ProtocolError(f"unknown message type {frame.msg_type}")

    def _send(self, peer: int, frame: WireFrame) -> None:
        data = encode_frame(frame)
        if self.capture_frames:
            self._sent_frames.append(data)
        try:
            self._out_socks[peer].sendall(data)
        except OSError as exc:
            raise PeerDisconnected(
                f"node {self.node_id} lost its link to peer {peer}: {exc}"
            ) from exc

    def _flood_frame(self, frame: WireFrame) -> None:
        for peer in self.out_ids:
            self._send(peer, frame)

    # -- protocol phases ---------------------------------------------------

    def flood_public_keys(self) -> dict[int, object]:
        """Announce the local key and re-flood each newly learned key once,
        until the directory holds every node's key.

        Re-delivered announcements are dropped (the directory is write-once
        per origin), so flooding terminates.  Returns only after the local
        re-flood queue is drained, which is when this node has forwarded
        everything its successors could still be waiting on.
        """
        assert self.keypair is not None
        self._flood_frame(
            WireFrame(
                MSG_KEY_ANNOUNCE,
                self.node_id,
                0,
                pack_key_announce(self.node_id, self.keypair.public),
            )
        )
        deadline = time.monotonic() + self.round_timeout
        while True:
            with self._lock:
                pending = list(self._reflood_queue)
                self._reflood_queue.clear()
            for payload in pending:
                self._flood_frame(
                    WireFrame(MSG_KEY_ANNOUNCE, self.node_id, 0, payload)
                )
            with self._lock:
                if len(self._key_directory) == self.graph.n_nodes:
                    if not self._reflood_queue:
                        return dict(self._key_directory)
                    continue
                self._raise_if_dead()
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    missing = sorted(
                        set(self.graph.nodes()) - set(self._key_directory)
                    )
                    raise Timeout(
                        f"node {self.node_id}: key directory incomplete, "
                        f"missing keys for nodes {missing}"
                    )
                self._lock.wait(timeout=min(remaining, 0.5))

    def _barrier(self, tag: int) -> None:
        """Startup/shutdown alignment: exchange ROUND_SYNC frames."""
        self._flood_frame(WireFrame(MSG_ROUND_SYNC, self.node_id, tag, b""))
        deadline = time.monotonic() + self.round_timeout
        with self._lock:
            while not all((tag, j) in self._syncs for j in self.in_ids):
                self._raise_if_dead()
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    waiting = [j for j in self.in_ids if (tag, j) not in self._syncs]
                    raise Timeout(
                        f"node {self.node_id}: sync barrier {tag} timed out "
                        f"waiting for {waiting}"
                    )
                self._lock.wait(timeout=min(remaining, 0.5))

    def _raise_if_dead(self) -> None:
        if self._dead is not None:
            raise PeerDisconnected(f"node {self.node_id}: {self._dead}")

    def _encrypt_share(self, receiver: int, value: float) -> Ciphertext:
        pub = self._key_directory[receiver]
        codec = FixedPointCodec(pub.n, self.config.fractional_bits)
        plain = codec.encode(value)
        start = time.perf_counter()
        cipher = encrypt(pub, plain, self._enc_rng)
        self.encrypt_seconds.append(time.perf_counter() - start)
        return cipher

    def _decrypt_share(self, value: int) -> float:
        assert self.keypair is not None
        codec = FixedPointCodec(self.keypair.public.n, self.config.fractional_bits)
        try:
            return codec.decode(decrypt(self.keypair, Ciphertext(value, self.keypair.public.key_id)))
        except MalformedCiphertext as exc:
            raise DecryptFailure(str(exc)) from exc

    def _await_round_shares(self, round_k: int) -> dict[int, tuple]:
        deadline = time.monotonic() + self.round_timeout
        with self._lock:
            while not all((round_k, j) in self._shares for j in self.in_ids):
                self._raise_if_dead()
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    waiting = [
                        j for j in self.in_ids if (round_k, j) not in self._shares
                    ]
                    raise PeerDisconnected(
                        f"node {self.node_id}: round {round_k} shares never "
                        f"arrived from {waiting}"
                    )
                self._lock.wait(timeout=min(remaining, 0.5))
            return {j: self._shares.pop((round_k, j)) for j in self.in_ids}

    # -- main driver -------------------------------------------------------

    def run(self) -> tuple[object, dict]:
        """Execute the configured number of rounds; returns the final node
        state and a manifest of summary statistics."""
        self._serve()
        try:
            self._connect_out()
            if self.mode == MODE_ENCRYPTED:
                self.flood_public_keys()
            self._barrier(0)

            rng = node_rng(self.config.seed, self.node_id)
            params = self.config.params
            x0 = resolve_x0(self.config)
            state = initial_state(self.node_id, x0[self.node_id], params)
            rows = [(0, state.s, state.w, state.pi)]

            for k in range(self.config.max_rounds):
                weights = generate_round_weights(
                    self.node_id, k, self.out_ids, params, rng
                )
                msgs, retained = outgoing_shares(state, weights)
                for msg in msgs:
                    if self.mode == MODE_ENCRYPTED:
                        payload = pack_cipher_shares(
                            self._encrypt_share(msg.receiver, msg.s_share).value,
                            self._encrypt_share(msg.receiver, msg.w_share).value,
                        )
                        frame = WireFrame(MSG_SHARE_ENC, self.node_id, k, payload)
                    else:
                        frame = WireFrame(
                            MSG_SHARE_PLAIN,
                            self.node_id,
                            k,
                            pack_plain_shares(msg.s_share, msg.w_share),
                        )
                    self._send(msg.receiver, frame)

                raw = self._await_round_shares(k)
                received = []
                for j, values in raw.items():
                    if self.mode == MODE_ENCRYPTED:
                        s_share = self._decrypt_share(values[0])
                        w_share = self._decrypt_share(values[1])
                    else:
                        s_share, w_share = values
                    received.append(
                        ShareMessage(
                            sender=j,
                            receiver=self.node_id,
                            round=k,
                            s_share=s_share,
                            w_share=w_share,
                        )
                    )
                state = apply_round(state, received, retained, self.in_ids)
                rows.append((state.round, state.s, state.w, state.pi))

            self._barrier(self.config.max_rounds + 1)
            manifest = self._finish(state, rows)
            return state, manifest
        finally:
            self._shutdown()

    def _finish(self, state, rows) -> dict:
        manifest = {
            "node_id": self.node_id,
            "mode": self.mode,
            "rounds": self.config.max_rounds,
            "final_s": state.s,
            "final_w": state.w,
            "final_pi": state.pi,
            "mean_encrypt_ms": (
                float(np.mean(self.encrypt_seconds)) * 1e3
                if self.encrypt_seconds
                else None
            ),
            "max_encrypt_ms": (
                float(np.max(self.encrypt_seconds)) * 1e3
                if self.encrypt_seconds
                else None
            ),
            "outputs": [],
        }
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            csv_path = self.out_dir / f"node{self.node_id}.csv"
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["round", "s", "w", "pi"])
                for row in rows:
                    writer.writerow([row[0]] + [repr(v) for v in row[1:]])
            manifest["outputs"].append(str(csv_path))
            if self.capture_frames:
                frames_path = self.out_dir / f"node{self.node_id}.frames"
                with open(frames_path, "wb") as fh:
                    for data in self._sent_frames:
                        fh.write(data)
                manifest["outputs"].append(str(frames_path))
            manifest_path = self.out_dir / f"node{self.node_id}.manifest.json"
            with open(manifest_path, "w") as fh:
                json.dump(manifest, fh, indent=2)
        return manifest

    def _shutdown(self) -> None:
        for sock in self._out_socks.values():
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            sock.close()
        try:
            self._listener.close()
        except (AttributeError, OSError):
            pass


def run_networked(
    node_id: int,
    listen: tuple[str, int],
    peers: dict[int, tuple[str, int]],
    config: ExperimentConfig,
    mode: str = MODE_PLAIN,
    out_dir: str | Path | None = None,
    capture_frames: bool = False,
    round_timeout: float = 60.0,
    connect_deadline: float = 20.0,
) -> tuple[object, dict]:
    """Run one networked node to completion."""
    runtime = NodeRuntime(
        node_id,
        listen,
        peers,
        config,
        mode=mode,
        out_dir=out_dir,
        capture_frames=capture_frames,
        round_timeout=round_timeout,
        connect_deadline=connect_deadline,
    )
    return runtime.run()


def allocate_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    """Grab ephemeral ports by binding and releasing them."""
    socks = []
    ports = []
    for _ in range(count):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.bind((host, 0))
        ports.append(s.getsockname()[1])
        socks.append(s)
    for s in socks:
        s.close()
    return ports


def _cluster_child(node_id, listen, peers, config_dict, mode, out_dir, capture) -> None:
    config = ExperimentConfig.from_dict(config_dict)
    run_networked(
        node_id, listen, peers, config, mode=mode, out_dir=out_dir,
        capture_frames=capture,
    )


def run_local_cluster(
    config: ExperimentConfig,
    mode: str = MODE_PLAIN,
    out_dir: str | Path = ".",
    host: str = "127.0.0.1",
    capture_frames: bool = False,
    timeout: float = 300.0,
) -> list[dict]:
    """Launch one local process per node, wait for completion, and return
    the per-node manifests (read back from disk)."""
    import multiprocessing as mp

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = config.graph.n_nodes
    ports = allocate_ports(n, host)
    peers = {i: (host, ports[i]) for i in range(n)}
    ctx = mp.get_context("spawn")
    procs = []
    for i in range(n):
        p = ctx.Process(
            target=_cluster_child,
            args=(i, peers[i], peers, config.to_dict(), mode, str(out_dir), capture_frames),
        )
        p.start()
        procs.append(p)
    deadline = time.monotonic() + timeout
    for p in procs:
        p.join(timeout=max(0.1, deadline - time.monotonic()))
    failed = [i for i, p in enumerate(procs) if p.exitcode != 0]
    for p in procs:
        if p.is_alive():
            p.terminate()
    if failed:
        raise PeerDisconnected(f"cluster nodes {failed} exited abnormally or hung")
    manifests = []
    for i in range(n):
        with open(out_dir / f"node{i}.manifest.json") as fh:
            manifests.append(json.load(fh))
    return manifests
