#!/usr/bin/env python3
"""Serve the simulated model backends over the model wire protocol.

    python3 scripts/model_server.py --port 8100

Then point the annotation service at it:

    expal serve --storage /tmp/anno --dataset toy=data/train.jsonl \
        --model-endpoint http://127.0.0.1:8100
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--embedding", action="store_true",
                        help="serve the embedding protocol instead of the model protocol")
    parser.add_argument("--dimension", type=int, default=1024)
    args = parser.parse_args()

    import uvicorn

    from expal.model_service import build_embedding_app, build_model_app

    if args.embedding:
        app = build_embedding_app(dimension=args.dimension)
    else:
        app = build_model_app(seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


if __name__ == "__main__":
    main()
