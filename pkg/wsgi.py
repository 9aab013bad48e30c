# wsgi.py
from codedsched import create_app

app = create_app()   # Gunicorn will look for "app" here
