from flask import Flask
from flask_cors import CORS
from .config import CORS_ORIGIN


def create_app():
    app = Flask(__name__)
    CORS(app, origins=CORS_ORIGIN or "*")

    @app.get("/health")
    def health():
        return {"ok": True}, 200

    from .routes import api_bp
    app.register_blueprint(api_bp, url_prefix="/api")

    from .cli import cli
    app.cli.add_command(cli, name="sim")

    if not CORS_ORIGIN:
        app.logger.info("CORS_ORIGIN is not set; allowing any origin.")

    return app
