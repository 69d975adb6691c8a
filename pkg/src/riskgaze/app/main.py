import logging

from flask import Flask

from ..core.config import log_level
from .cli import LOG_FORMAT
from .runs import bp as runs_bp


def create_app(runs_dir: str | None = None) -> Flask:
    app = Flask(__name__)
    if runs_dir is not None:
        app.config["RISKGAZE_RUNS_DIR"] = runs_dir
    app.register_blueprint(runs_bp)
    return app


app = create_app()

if __name__ == "__main__":
    logging.basicConfig(level=log_level(), format=LOG_FORMAT)
    app.run(debug=True)
