# Package initializer for app
