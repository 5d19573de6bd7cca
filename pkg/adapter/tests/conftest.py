class ChunkedReader:
    """Wraps bytes and returns at most ``chunk`` bytes per read call."""

    def __init__(self, data: bytes, chunk: int):
        import io

        self.stream = io.BytesIO(data)
        self.chunk = chunk

    def read(self, n: int) -> bytes:
        return self.stream.read(min(n, self.chunk))
